#include "neurodec/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neurodec::stats {

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

namespace {

/// Null distribution of 2*W+ for given doubled ranks (integers), via the
/// generating polynomial prod_i (1 + x^{r_i}). Returns counts over 0..sum.
std::vector<double> signed_rank_null_counts(const std::vector<long long>& doubled_ranks) {
    long long total = 0;
    for (long long r : doubled_ranks) total += r;
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    long long reach = 0;
    for (long long r : doubled_ranks) {
        reach += r;
        for (long long s = reach; s >= r; --s) {
            counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
        }
    }
    return counts;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: paired samples differ in length");
    if (a.size() < 5) throw std::invalid_argument("wilcoxon: need at least 5 pairs");
    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) {
        throw std::invalid_argument("wilcoxon: all differences are zero, statistic undefined");
    }
    const int n = static_cast<int>(diffs.size());
    std::vector<double> abs_d(diffs.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) abs_d[i] = std::abs(diffs[i]);
    const std::vector<double> ranks = average_ranks(abs_d);

    double w_plus = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        if (diffs[i] > 0.0) w_plus += ranks[i];
    }

    WilcoxonResult res;
    res.w_plus = w_plus;
    res.n_used = n;

    if (n <= 25) {
        // Exact: enumerate the null of 2*W+ (integer-valued with tied ranks).
        std::vector<long long> doubled(diffs.size());
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            doubled[i] = std::llround(2.0 * ranks[i]);
        }
        const std::vector<double> counts = signed_rank_null_counts(doubled);
        const double total = std::pow(2.0, n);
        const long long w2 = std::llround(2.0 * w_plus);
        double cdf = 0.0, sf = 0.0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            if (static_cast<long long>(s) <= w2) cdf += counts[s];
            if (static_cast<long long>(s) >= w2) sf += counts[s];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(cdf, sf) / total);
        res.exact = true;
    } else {
        const double mean = n * (n + 1) / 4.0;
        double tie_term = 0.0;
        std::vector<double> sorted = abs_d;
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
        const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
        const double z = (w_plus - mean) / std::sqrt(var);
        res.p_value = normal_two_sided_p(z);
        res.exact = false;
    }
    return res;
}

SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3) {
        throw std::invalid_argument("spearman: need paired samples of length >= 3");
    }
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    Vector vx = Eigen::Map<const Vector>(rx.data(), static_cast<Eigen::Index>(rx.size()));
    Vector vy = Eigen::Map<const Vector>(ry.data(), static_cast<Eigen::Index>(ry.size()));
    SpearmanResult res;
    res.n = static_cast<int>(x.size());
    res.rho = pearson(vx, vy);
    const double n = static_cast<double>(res.n);
    if (std::abs(res.rho) >= 1.0) {
        res.p_value = 0.0;
    } else {
        const double t = res.rho * std::sqrt((n - 2.0) / (1.0 - res.rho * res.rho));
        res.p_value = student_t_two_sided_p(t, n - 2.0);
    }
    return res;
}

TTestResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_ttest: need >= 2 per group");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
    double va = 0.0, vb = 0.0;
    for (double v : a) va += (v - ma) * (v - ma);
    for (double v : b) vb += (v - mb) * (v - mb);
    va /= (na - 1.0);
    vb /= (nb - 1.0);
    const double se2 = va / na + vb / nb;
    TTestResult res;
    if (se2 <= 0.0) {
        res.t = (ma == mb) ? 0.0 : std::numeric_limits<double>::infinity();
        res.df = na + nb - 2.0;
        res.p_value = (ma == mb) ? 1.0 : 0.0;
        return res;
    }
    res.t = (ma - mb) / std::sqrt(se2);
    res.df = se2 * se2 /
             (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    res.p_value = student_t_two_sided_p(res.t, res.df);
    return res;
}

namespace {

double beta_cont_fraction(double a, double b, double x) {
    // Lentz's algorithm for the continued fraction of I_x(a,b).
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return bt * beta_cont_fraction(a, b, x) / a;
    }
    return 1.0 - bt * beta_cont_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    if (df <= 0.0) throw std::invalid_argument("student_t: df must be > 0");
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace neurodec::stats
