#include <doctest.h>

#include "neurodec/common.hpp"
#include "neurodec/preprocess.hpp"

#include <cmath>

using namespace neurodec;
using namespace neurodec::prep;

namespace {

ContinuousRecording sine_recording(double freq_hz, double fs, double seconds) {
    ContinuousRecording rec;
    rec.sampling_rate_hz = fs;
    const auto n = static_cast<Eigen::Index>(seconds * fs);
    rec.data.resize(1, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        rec.data(0, i) = std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / fs);
    }
    return rec;
}

double steady_amplitude(const ContinuousRecording& rec) {
    // RMS * sqrt(2) over the middle half, away from filter edges
    const Eigen::Index n = rec.data.cols();
    const Eigen::Index lo = n / 4;
    const Eigen::Index len = n / 2;
    const double rms = std::sqrt(rec.data.row(0).middleCols(lo, len).squaredNorm() /
                                 static_cast<double>(len));
    return rms * std::sqrt(2.0);
}

}  // namespace

TEST_CASE("constant input is removed entirely by the high-pass stage") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 1000.0;
    rec.data = Matrix::Constant(2, 5000, 3.7);
    const ContinuousRecording out = highpass_downsample(rec, 0.1, 120.0);
    CHECK(std::fabs(out.data.row(0).mean()) < 1e-6 * 3.7);
    CHECK(out.data.cwiseAbs().maxCoeff() < 1e-6 * 3.7);
    CHECK(out.sampling_rate_hz == doctest::Approx(120.0));
}

TEST_CASE("passband sine survives resampling within 5 percent") {
    const ContinuousRecording rec = sine_recording(30.0, 1000.0, 10.0);
    const ContinuousRecording out = highpass_downsample(rec, 0.1, 120.0);
    CHECK(steady_amplitude(out) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("above-Nyquist sine is attenuated at least 20 dB") {
    const ContinuousRecording rec = sine_recording(80.0, 1000.0, 10.0);
    const ContinuousRecording out = highpass_downsample(rec, 0.1, 120.0);
    CHECK(steady_amplitude(out) < 0.1);
}

TEST_CASE("equal input and output rates skip resampling") {
    ContinuousRecording rec = sine_recording(5.0, 120.0, 4.0);
    rec.events.push_back({120, 1.0, 0});
    const ContinuousRecording out = highpass_downsample(rec, 0.1, 120.0);
    CHECK(out.data.cols() == rec.data.cols());
    CHECK(out.events[0].onset_sample == 120);
}

TEST_CASE("cutoff at or above the output Nyquist is rejected") {
    const ContinuousRecording rec = sine_recording(5.0, 1000.0, 1.0);
    CHECK_THROWS_AS(highpass_downsample(rec, 60.0, 120.0), std::invalid_argument);
    CHECK_THROWS_AS(highpass_downsample(rec, 0.1, 4000.0), std::invalid_argument);
}

TEST_CASE("event onsets land on the new sample grid") {
    ContinuousRecording rec = sine_recording(10.0, 1000.0, 10.0);
    rec.events.push_back({1000, 1.0, 0});
    rec.events.push_back({5500, 5.5, 1});
    const ContinuousRecording out = highpass_downsample(rec, 0.1, 120.0);
    CHECK(out.events[0].onset_sample == 120);
    CHECK(out.events[1].onset_sample == 660);
}

TEST_CASE("robust scaler on the four-point hand case") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 10.0;
    rec.data.resize(1, 4);
    rec.data << 1, 2, 3, 4;  // median 2.5, IQR 1.5 with linear quantiles
    const ContinuousRecording out = robust_scale_clip(rec);
    CHECK(out.data(0, 0) == doctest::Approx(-1.0));
    CHECK(out.data(0, 1) == doctest::Approx(-1.0 / 3.0));
    CHECK(out.data(0, 2) == doctest::Approx(1.0 / 3.0));
    CHECK(out.data(0, 3) == doctest::Approx(1.0));
}

TEST_CASE("robust scaler clamps to [-20, 20] exactly") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 10.0;
    rec.data.resize(1, 8);
    rec.data << 0, 0.1, -0.1, 0.05, -0.05, 0.02, 9000.0, -9000.0;
    const ContinuousRecording out = robust_scale_clip(rec);
    CHECK(out.data.maxCoeff() == 20.0);
    CHECK(out.data.minCoeff() == -20.0);
}

TEST_CASE("degenerate IQR divides by one and is reported") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 10.0;
    rec.data = Matrix::Constant(2, 6, 4.2);
    Report report;
    const ContinuousRecording out = robust_scale_clip(rec, &report);
    CHECK(out.data.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(report.zero_iqr_channels.size() == 2);
}

TEST_CASE("robust scaler output always lies inside [-20, 20]") {
    Rng rng(7);
    ContinuousRecording rec;
    rec.sampling_rate_hz = 100.0;
    rec.data.resize(3, 500);
    for (Eigen::Index c = 0; c < rec.data.cols(); ++c) {
        for (Eigen::Index r = 0; r < rec.data.rows(); ++r) {
            rec.data(r, c) = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(6)) - 2.0);
        }
    }
    const ContinuousRecording out = robust_scale_clip(rec);
    CHECK(out.data.maxCoeff() <= 20.0);
    CHECK(out.data.minCoeff() >= -20.0);
}

TEST_CASE("epoch shapes match the reference windows") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 120.0;
    rec.data = Matrix::Zero(2, 1200);
    rec.events.push_back({300, 2.5, 0});
    const EpochSet a = epoch(rec, {-0.2, 1.0});
    REQUIRE(a.n_trials() == 1);
    CHECK(a.n_timepoints() == 144);
    const EpochSet b = epoch(rec, {-0.5, 1.0});
    CHECK(b.n_timepoints() == 180);
}

TEST_CASE("baseline correction zeroes the baseline mean per channel") {
    Rng rng(9);
    ContinuousRecording rec;
    rec.sampling_rate_hz = 100.0;
    rec.data.resize(3, 800);
    for (Eigen::Index c = 0; c < rec.data.cols(); ++c) {
        for (Eigen::Index r = 0; r < rec.data.rows(); ++r) rec.data(r, c) = rng.normal() + 2.0;
    }
    rec.events.push_back({400, 4.0, 0});
    const EpochSet set = epoch(rec, {-0.2, 1.0}, {{-0.2, 0.0}});
    REQUIRE(set.n_trials() == 1);
    // the first 20 samples of the epoch are the baseline interval
    for (Eigen::Index ch = 0; ch < 3; ++ch) {
        CHECK(std::fabs(set.tensors[0].row(ch).head(20).mean()) < 1e-9);
    }
}

TEST_CASE("out-of-range trials are dropped and logged") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 100.0;
    rec.data = Matrix::Zero(1, 500);
    rec.events.push_back({5, 0.05, 0});    // window would start before 0
    rec.events.push_back({250, 2.5, 1});   // fine
    rec.events.push_back({495, 4.95, 2});  // runs past the end
    Report report;
    const EpochSet set = epoch(rec, {-0.2, 1.0}, std::nullopt, &report);
    CHECK(set.n_trials() == 1);
    CHECK(set.trial_rows[0] == 1);
    CHECK(report.dropped_trials.size() == 2);
}

TEST_CASE("non-increasing event onsets are rejected") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 100.0;
    rec.data = Matrix::Zero(1, 500);
    rec.events.push_back({200, 2.0, 0});
    rec.events.push_back({100, 1.0, 1});
    CHECK_THROWS_AS(epoch(rec, {-0.1, 0.5}), std::invalid_argument);
}

TEST_CASE("empty baseline at the given rate is an error") {
    ContinuousRecording rec;
    rec.sampling_rate_hz = 10.0;
    rec.data = Matrix::Zero(1, 100);
    rec.events.push_back({50, 5.0, 0});
    CHECK_THROWS_AS(epoch(rec, {-0.5, 1.0}, {{-0.02, 0.0}}), std::invalid_argument);
}

TEST_CASE("detrending annihilates a drift-basis input") {
    const Eigen::Index n = 80;
    FmriSeries series;
    series.tr_seconds = 1.5;
    series.data.resize(2, n);
    for (Eigen::Index t = 0; t < n; ++t) {
        // one slow cosine inside the drift band (period >= 128 s)
        series.data(0, t) =
            std::cos(std::numbers::pi * 1.0 * (2.0 * t + 1.0) / (2.0 * static_cast<double>(n)));
        series.data(1, t) = 5.0;  // pure constant
    }
    Report report;
    const FmriSeries out = fmri_detrend_zscore(series, 128.0, &report);
    CHECK(out.data.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(report.zero_variance_vertices.size() == 2);
}

TEST_CASE("white noise is z-scored to mean zero unit variance") {
    Rng rng(31);
    FmriSeries series;
    series.tr_seconds = 2.0;
    series.data.resize(4, 200);
    for (Eigen::Index t = 0; t < 200; ++t) {
        for (Eigen::Index v = 0; v < 4; ++v) series.data(v, t) = 3.0 * rng.normal() - 1.0;
    }
    const FmriSeries out = fmri_detrend_zscore(series);
    for (Eigen::Index v = 0; v < 4; ++v) {
        CHECK(std::fabs(out.data.row(v).mean()) < 1e-9);
        const double var = out.data.row(v).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("detrended residual is orthogonal to every drift regressor") {
    Rng rng(32);
    const Eigen::Index n = 120;
    const double tr = 2.0;
    FmriSeries series;
    series.tr_seconds = tr;
    series.data.resize(1, n);
    for (Eigen::Index t = 0; t < n; ++t) series.data(0, t) = rng.normal() + 0.02 * t;
    const FmriSeries out = fmri_detrend_zscore(series, 128.0);
    const auto k_max = static_cast<Eigen::Index>(std::floor(2.0 * n * tr / 128.0));
    for (Eigen::Index k = 0; k <= k_max; ++k) {
        double dot = 0.0, norm = 0.0;
        for (Eigen::Index t = 0; t < n; ++t) {
            const double reg =
                k == 0 ? 1.0
                       : std::cos(std::numbers::pi * k * (2.0 * t + 1.0) / (2.0 * static_cast<double>(n)));
            dot += reg * out.data(0, t);
            norm += reg * reg;
        }
        CHECK(std::fabs(dot / std::sqrt(norm)) < 1e-8);
    }
}

TEST_CASE("detrend and z-score is idempotent up to 1e-6") {
    Rng rng(33);
    FmriSeries series;
    series.tr_seconds = 1.5;
    series.data.resize(3, 150);
    for (Eigen::Index t = 0; t < 150; ++t) {
        for (Eigen::Index v = 0; v < 3; ++v) {
            series.data(v, t) = rng.normal() + 0.5 * std::sin(0.01 * t);
        }
    }
    const FmriSeries once = fmri_detrend_zscore(series);
    const FmriSeries twice = fmri_detrend_zscore(once);
    CHECK((twice.data - once.data).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("fmri epochs yield five TRs for all four reference windows") {
    struct Case {
        double tr, t0, t1;
    };
    for (const Case& c : {Case{2.0, 3.0, 13.0}, Case{1.5, 3.0, 10.5}, Case{2.0, 3.0, 13.0},
                          Case{1.6, 3.0, 11.0}}) {
        FmriSeries series;
        series.tr_seconds = c.tr;
        series.data = Matrix::Zero(2, 64);
        series.events.push_back({0, 10.0, 0});
        series.events.push_back({0, 17.31, 1});  // off-grid onset
        const EpochSet set = fmri_epoch(series, {c.t0, c.t1});
        REQUIRE(set.n_trials() == 2);
        CHECK(set.n_timepoints() == 5);
    }
}

TEST_CASE("fmri trials too close to the run end are dropped with a log") {
    FmriSeries series;
    series.tr_seconds = 2.0;
    series.data = Matrix::Zero(1, 20);  // 40 s run
    series.events.push_back({0, 5.0, 0});
    series.events.push_back({0, 30.0, 1});  // needs TRs past the end
    Report report;
    const EpochSet set = fmri_epoch(series, {3.0, 13.0}, &report);
    CHECK(set.n_trials() == 1);
    REQUIRE(report.dropped_trials.size() == 1);
    CHECK(report.dropped_trials[0].first == 1);
}

TEST_CASE("window views: full is identity, sliding counts, growing reaches the end") {
    EpochSet epochs;
    epochs.window_start_s = -0.2;
    epochs.window_end_s = 1.0;
    epochs.rate_hz = 120.0;
    Rng rng(44);
    for (int i = 0; i < 3; ++i) {
        Matrix m(2, 144);
        for (Eigen::Index c = 0; c < 144; ++c) {
            for (Eigen::Index r = 0; r < 2; ++r) m(r, c) = rng.normal();
        }
        epochs.tensors.push_back(m);
        epochs.trial_rows.push_back(i);
    }

    const auto full = window_views(epochs, parse_window_spec("full", 0, 0));
    REQUIRE(full.size() == 1);
    CHECK((full[0].epochs.tensors[0] - epochs.tensors[0]).norm() == doctest::Approx(0.0));

    const auto sliding = window_views(epochs, parse_window_spec("sliding", 0.1, 0));
    CHECK(sliding.size() == 12);
    for (const auto& w : sliding) CHECK(w.epochs.n_timepoints() == 12);

    const auto growing = window_views(epochs, parse_window_spec("growing", 0.1, -0.2));
    CHECK(growing.back().epochs.n_timepoints() == 144);
    CHECK(growing.back().label_end_s == doctest::Approx(1.0));
    for (std::size_t i = 1; i < growing.size(); ++i) {
        CHECK(growing[i].epochs.n_timepoints() > growing[i - 1].epochs.n_timepoints());
    }

    // fMRI: five TRs sliding one TR -> five windows
    EpochSet fmri;
    fmri.window_start_s = 3.0;
    fmri.window_end_s = 10.5;
    fmri.rate_hz = 1.0 / 1.5;
    fmri.tensors.push_back(Matrix::Zero(4, 5));
    fmri.trial_rows.push_back(0);
    const auto trs = window_views(fmri, parse_window_spec("sliding", 1.5, 0));
    CHECK(trs.size() == 5);
}
