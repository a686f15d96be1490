#include <doctest.h>

#include "neurodec/common.hpp"
#include "neurodec/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace neurodec;
using namespace neurodec::scaling;

TEST_CASE("recording time arithmetic") {
    CHECK(recording_time_hours(943892, 0.1) == doctest::Approx(26.2192).epsilon(1e-3));
    CHECK(recording_time_hours(0, 5.0) == 0.0);
    CHECK(recording_time_hours(108000, 4.0) == doctest::Approx(120.0).epsilon(1e-12));
    CHECK_THROWS_AS(recording_time_hours(-1, 1.0), std::invalid_argument);
}

TEST_CASE("cost retro-inference reproduces the published dataset figures") {
    const auto table = builtin_dataset_table();
    const std::map<std::string, double> expected_k = {
        {"Xu2024", 1.5},     {"Grootswagers2022", 6.9}, {"Gifford2022", 9.7},
        {"Hebart2023meg", 19.4}, {"Shen2019", 41.1},    {"Hebart2023fmri", 26.0},
        {"Chang2019", 44.8}, {"Allen2022", 131.2},
    };
    for (const auto& row : table) {
        const double usd = estimate_cost_usd(static_cast<double>(row.train_valid_trials),
                                             row.spec.soa_seconds, row.spec.hourly_cost_usd);
        const double want = expected_k.at(row.spec.name) * 1000.0;
        CHECK_MESSAGE(std::fabs(usd - want) <= 100.0, row.spec.name, " cost ", usd);
    }
}

TEST_CASE("cost is linear in trials and rate") {
    const double base = estimate_cost_usd(1000, 2.0, 500.0);
    CHECK(estimate_cost_usd(2000, 2.0, 500.0) == doctest::Approx(2.0 * base));
    CHECK(estimate_cost_usd(1000, 2.0, 1000.0) == doctest::Approx(2.0 * base));
}

TEST_CASE("log-linear fit recovers an exact line with zero sem") {
    const auto fit = fit_loglinear({{10, 1}, {100, 2}, {1000, 3}});
    CHECK(fit.slope == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fit.sem_slope == doctest::Approx(0.0));
    CHECK(fit.sem_intercept == doctest::Approx(0.0));
}

TEST_CASE("log-linear fit recovers planted parameters within 1e-9") {
    const double a = 0.075, b = -0.1;
    std::vector<std::pair<double, double>> pts;
    for (double x : {30.0, 100.0, 460.0, 2100.0, 9800.0, 45000.0}) {
        pts.emplace_back(x, a * std::log10(x) + b);
    }
    const auto fit = fit_loglinear(pts);
    CHECK(std::fabs(fit.slope - a) < 1e-9);
    CHECK(std::fabs(fit.intercept - b) < 1e-9);
}

TEST_CASE("fit is invariant to point order and rejects degenerate x") {
    std::vector<std::pair<double, double>> pts = {{10, 0.3}, {300, 0.5}, {9000, 0.65}, {100, 0.41}};
    auto fit1 = fit_loglinear(pts);
    std::reverse(pts.begin(), pts.end());
    auto fit2 = fit_loglinear(pts);
    CHECK(fit1.slope == doctest::Approx(fit2.slope).epsilon(1e-14));
    CHECK(fit1.intercept == doctest::Approx(fit2.intercept).epsilon(1e-14));
    CHECK_THROWS_AS(fit_loglinear({{10, 1}, {10, 2}, {10, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(fit_loglinear({{-1, 1}, {10, 2}, {100, 3}}), std::invalid_argument);
}

TEST_CASE("sem formula agrees with a bootstrap oracle within 15 percent") {
    Rng rng(99);
    std::vector<std::pair<double, double>> pts;
    const double a = 0.05, b = -0.02, noise = 0.008;
    for (int i = 0; i < 24; ++i) {
        const double x = std::pow(10.0, 1.0 + 3.0 * i / 23.0);
        pts.emplace_back(x, a * std::log10(x) + b + noise * rng.normal());
    }
    const auto fit = fit_loglinear(pts);
    // bootstrap: resample points with replacement, refit, take the spread
    const int n_boot = 10000;
    std::vector<double> slopes;
    slopes.reserve(n_boot);
    for (int it = 0; it < n_boot; ++it) {
        std::vector<std::pair<double, double>> sample;
        sample.reserve(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sample.push_back(pts[static_cast<std::size_t>(rng.below(pts.size()))]);
        }
        std::set<double> xs;
        for (auto& [x, y] : sample) xs.insert(x);
        if (xs.size() < 3) {
            --it;
            continue;
        }
        slopes.push_back(fit_loglinear(sample).slope);
    }
    double mean = 0.0;
    for (double s : slopes) mean += s;
    mean /= static_cast<double>(slopes.size());
    double var = 0.0;
    for (double s : slopes) var += (s - mean) * (s - mean);
    var /= static_cast<double>(slopes.size() - 1);
    const double boot_sem = std::sqrt(var);
    CHECK(std::fabs(fit.sem_slope - boot_sem) / boot_sem < 0.15);
}

TEST_CASE("threshold inversion and prediction round-trip") {
    ScalingFit fit;
    fit.slope = 1.0;
    fit.intercept = 0.0;
    CHECK(solve_threshold(fit, 2.0) == doctest::Approx(100.0));
    CHECK(predict_at(fit, 10.0) == doctest::Approx(1.0));

    const auto fitted = fit_loglinear({{20, 0.11}, {200, 0.34}, {2000, 0.52}, {20000, 0.77}});
    for (double r_star : {0.2, 0.4, 0.6}) {
        const double x = solve_threshold(fitted, r_star);
        CHECK(std::fabs(predict_at(fitted, x) - r_star) < 1e-12);
    }

    ScalingFit flat;
    flat.slope = 0.0;
    CHECK_THROWS_AS(solve_threshold(flat, 0.5), std::invalid_argument);
    ScalingFit neg;
    neg.slope = -0.5;
    neg.intercept = 0.1;
    CHECK_THROWS_AS(solve_threshold(neg, 0.5), std::invalid_argument);
    CHECK(solve_threshold(neg, 0.05) > 0.0);
}

TEST_CASE("threshold crossing planted at 57 trials is recovered") {
    const double a = 0.012;
    const double b = 0.01 - a * std::log10(57.0);
    std::vector<std::pair<double, double>> pts;
    for (double x : {5.0, 57.0, 640.0, 7200.0}) pts.emplace_back(x, a * std::log10(x) + b);
    const auto fit = fit_loglinear(pts);
    CHECK(std::fabs(solve_threshold(fit, 0.01) - 57.0) < 0.5);
}

TEST_CASE("monotone prediction for positive slopes") {
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        ScalingFit fit;
        fit.slope = 0.01 + rng.uniform();
        fit.intercept = rng.normal() * 0.1;
        double prev = -1e9;
        for (double x : {1.0, 10.0, 55.0, 1234.0}) {
            const double r = predict_at(fit, x);
            CHECK(r > prev);
            prev = r;
        }
    }
}

TEST_CASE("predict_at residuals at training points equal a refit oracle") {
    Rng rng(17);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 9; ++i) {
        const double x = std::pow(10.0, 1.0 + 0.5 * i);
        pts.emplace_back(x, 0.04 * std::log10(x) - 0.01 + 0.01 * rng.normal());
    }
    const auto fit = fit_loglinear(pts);
    // independent route: 2x2 normal equations solved directly in the test
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : pts) {
        const double lx = std::log10(x);
        n += 1; sx += lx; sy += y; sxx += lx * lx; sxy += lx * y;
    }
    const double det = n * sxx - sx * sx;
    const double a = (n * sxy - sx * sy) / det;
    const double b = (sxx * sy - sx * sxy) / det;
    for (const auto& [x, y] : pts) {
        const double resid_fit = y - predict_at(fit, x);
        const double resid_oracle = y - (a * std::log10(x) + b);
        CHECK(std::fabs(resid_fit - resid_oracle) < 1e-12);
    }
}

TEST_CASE("plateau detector stays quiet on log-linear growth and fires on saturation") {
    std::vector<std::pair<double, double>> linear, saturating;
    for (int i = 0; i < 12; ++i) {
        const double x = std::pow(10.0, 0.5 + 0.35 * i);
        linear.emplace_back(x, 0.05 * std::log10(x) + 0.01);
        saturating.emplace_back(x, 0.3 * (1.0 - std::exp(-x / 50.0)));
    }
    CHECK_FALSE(detect_plateau(linear));
    CHECK(detect_plateau(saturating));
}

TEST_CASE("cost table json round-trip and fit json round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "neurodec_test_scaling";
    std::filesystem::create_directories(dir);
    const CostTable t = CostTable::defaults();
    CHECK(t.rate(DeviceKind::EEG) == doctest::Approx(263.0));
    CHECK(t.rate(DeviceKind::MEG) == doctest::Approx(550.0));
    CHECK(t.rate(DeviceKind::FMRI3T) == doctest::Approx(935.0));
    CHECK(t.rate(DeviceKind::FMRI7T) == doctest::Approx(1093.0));
    t.write_json(dir / "rates.json");
    const CostTable u = CostTable::read_json(dir / "rates.json");
    CHECK(u.rate(DeviceKind::FMRI7T) == doctest::Approx(1093.0));

    ScalingFit fit;
    fit.slope = 0.045;
    fit.intercept = -0.02;
    fit.sem_slope = 0.003;
    fit.x_kind = XKind::Hours;
    fit.n_points = 12;
    const auto text = fit_to_json(fit, "eeg");
    const ScalingFit back = fit_from_json(text);
    CHECK(back.slope == doctest::Approx(fit.slope));
    CHECK(back.x_kind == XKind::Hours);
    std::filesystem::remove_all(dir);
}
