#include "neurodec/scaling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace neurodec::scaling {

using nlohmann::json;

std::string xkind_name(XKind k) {
    switch (k) {
        case XKind::Trials: return "trials";
        case XKind::Hours: return "hours";
        case XKind::Usd: return "usd";
    }
    throw std::logic_error("unreachable x kind");
}

XKind parse_xkind(const std::string& name) {
    if (name == "trials") return XKind::Trials;
    if (name == "hours") return XKind::Hours;
    if (name == "usd") return XKind::Usd;
    throw std::invalid_argument("unknown x kind: " + name + " (expected trials|hours|usd)");
}

double recording_time_hours(double n_trials, double soa_seconds) {
    if (n_trials < 0.0 || soa_seconds < 0.0) {
        throw std::invalid_argument("recording_time: inputs must be >= 0");
    }
    return n_trials * soa_seconds / 3600.0;
}

double estimate_cost_usd(double n_trials, double soa_seconds, double hourly_rate_usd) {
    if (hourly_rate_usd < 0.0) throw std::invalid_argument("estimate_cost: rate must be >= 0");
    return recording_time_hours(n_trials, soa_seconds) * hourly_rate_usd;
}

CostTable CostTable::defaults() {
    CostTable t;
    t.hourly_usd = {{DeviceKind::EEG, 263.0},
                    {DeviceKind::MEG, 550.0},
                    {DeviceKind::FMRI3T, 935.0},
                    {DeviceKind::FMRI7T, 1093.0}};
    return t;
}

double CostTable::rate(DeviceKind d) const {
    auto it = hourly_usd.find(d);
    if (it == hourly_usd.end()) throw std::invalid_argument("cost table: no rate for device");
    if (!(it->second > 0.0)) throw std::invalid_argument("cost table: rates must be positive");
    return it->second;
}

void CostTable::write_json(const std::filesystem::path& file) const {
    json j;
    for (const auto& [dev, rate] : hourly_usd) j[device_name(dev)] = rate;
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << j.dump(2) << "\n";
}

CostTable CostTable::read_json(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    json j = json::parse(in);
    CostTable t;
    for (const auto& [key, val] : j.items()) {
        t.hourly_usd[parse_device(key)] = val.get<double>();
    }
    return t;
}

ScalingFit fit_loglinear(const std::vector<std::pair<double, double>>& points, XKind x_kind) {
    std::set<double> distinct;
    for (const auto& [x, r] : points) {
        if (!(x > 0.0)) throw std::invalid_argument("fit_loglinear: x values must be > 0");
        distinct.insert(x);
    }
    if (distinct.size() < 3) {
        throw std::invalid_argument("fit_loglinear: need >= 3 points with distinct x");
    }
    const double n = static_cast<double>(points.size());
    double sx = 0.0, sy = 0.0;
    for (const auto& [x, r] : points) {
        sx += std::log10(x);
        sy += r;
    }
    const double mx = sx / n;
    const double my = sy / n;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& [x, r] : points) {
        const double dx = std::log10(x) - mx;
        sxx += dx * dx;
        sxy += dx * (r - my);
    }
    ScalingFit fit;
    fit.x_kind = x_kind;
    fit.n_points = static_cast<int>(points.size());
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (const auto& [x, r] : points) {
        const double resid = r - (fit.slope * std::log10(x) + fit.intercept);
        ssr += resid * resid;
    }
    if (points.size() > 2) {
        const double s2 = ssr / (n - 2.0);
        fit.sem_slope = std::sqrt(s2 / sxx);
        fit.sem_intercept = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return fit;
}

double solve_threshold(const ScalingFit& fit, double r_star) {
    if (fit.slope == 0.0) throw std::invalid_argument("solve_threshold: slope must be nonzero");
    if (fit.slope < 0.0 && r_star > fit.intercept) {
        throw std::invalid_argument("solve_threshold: threshold unreachable with negative slope");
    }
    return std::pow(10.0, (r_star - fit.intercept) / fit.slope);
}

double predict_at(const ScalingFit& fit, double x) {
    return fit.slope * log10_checked(x, "predict_at") + fit.intercept;
}

bool detect_plateau(const std::vector<std::pair<double, double>>& points, double z) {
    if (points.size() < 6) return false;
    std::vector<std::pair<double, double>> sorted = points;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t half = sorted.size() / 2;
    std::vector<std::pair<double, double>> lower(sorted.begin(),
                                                 sorted.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::pair<double, double>> upper(sorted.begin() + static_cast<std::ptrdiff_t>(half),
                                                 sorted.end());
    auto distinct = [](const std::vector<std::pair<double, double>>& pts) {
        std::set<double> xs;
        for (const auto& [x, r] : pts) xs.insert(x);
        return xs.size() >= 3;
    };
    if (!distinct(lower) || !distinct(upper)) return false;
    const ScalingFit full = fit_loglinear(sorted);
    const ScalingFit up = fit_loglinear(upper);
    return up.slope + z * up.sem_slope < full.slope;
}

std::string fit_to_json(const ScalingFit& fit, const std::string& label) {
    json j;
    j["device"] = label;
    j["x_kind"] = xkind_name(fit.x_kind);
    j["slope"] = fit.slope;
    j["intercept"] = fit.intercept;
    j["sem_slope"] = fit.sem_slope;
    j["sem_intercept"] = fit.sem_intercept;
    j["n_points"] = fit.n_points;
    return j.dump(2);
}

ScalingFit fit_from_json(const std::string& text) {
    json j = json::parse(text);
    ScalingFit fit;
    fit.x_kind = parse_xkind(j.at("x_kind").get<std::string>());
    fit.slope = j.at("slope").get<double>();
    fit.intercept = j.at("intercept").get<double>();
    fit.sem_slope = j.value("sem_slope", 0.0);
    fit.sem_intercept = j.value("sem_intercept", 0.0);
    fit.n_points = j.value("n_points", 0);
    return fit;
}

}  // namespace neurodec::scaling
