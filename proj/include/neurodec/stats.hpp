#pragma once

#include "neurodec/common.hpp"

#include <vector>

namespace neurodec::stats {

struct WilcoxonResult {
    double w_plus = 0.0;   // sum of ranks of positive differences
    double p_value = 1.0;  // two-sided
    int n_used = 0;        // pairs remaining after zero-difference removal
    bool exact = false;
};

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; ties get average ranks. Exact null distribution (sign
/// enumeration via polynomial convolution) for n <= 25, normal approximation
/// with tie correction above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

struct SpearmanResult {
    double rho = 0.0;
    double p_value = 1.0;  // two-sided, t approximation
    int n = 0;
};

SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y);

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;  // two-sided
};

/// Welch two-sample t-test (unequal variances).
TTestResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Average ranks (1-based), ties averaged.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Two-sided tail of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

double normal_two_sided_p(double z);

}  // namespace neurodec::stats
