#pragma once

#include "neurodec/common.hpp"
#include "neurodec/dataset.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neurodec::scaling {

enum class XKind { Trials, Hours, Usd };

std::string xkind_name(XKind k);
XKind parse_xkind(const std::string& name);

struct ScalingFit {
    double slope = 0.0;
    double intercept = 0.0;
    double sem_slope = 0.0;
    double sem_intercept = 0.0;
    XKind x_kind = XKind::Trials;
    int n_points = 0;
};

/// Hours of recording implied by n_trials presentations at the given SOA.
double recording_time_hours(double n_trials, double soa_seconds);

/// Acquisition cost in USD for n_trials at the given SOA and hourly rate.
double estimate_cost_usd(double n_trials, double soa_seconds, double hourly_rate_usd);

struct CostTable {
    std::map<DeviceKind, double> hourly_usd;

    static CostTable defaults();
    double rate(DeviceKind d) const;
    void write_json(const std::filesystem::path& file) const;
    static CostTable read_json(const std::filesystem::path& file);
};

/// Least squares of R on log10(x); standard errors from residual variance.
ScalingFit fit_loglinear(const std::vector<std::pair<double, double>>& points,
                         XKind x_kind = XKind::Trials);

/// x at which the fitted line reaches R_star.
double solve_threshold(const ScalingFit& fit, double r_star);

double predict_at(const ScalingFit& fit, double x);

/// Flattening heuristic: true when the upper half of the x-range has a slope
/// significantly below the full-range slope. Needs >= 6 points.
bool detect_plateau(const std::vector<std::pair<double, double>>& points, double z = 2.0);

std::string fit_to_json(const ScalingFit& fit, const std::string& label);
ScalingFit fit_from_json(const std::string& text);

}  // namespace neurodec::scaling
