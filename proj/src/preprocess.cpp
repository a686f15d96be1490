#include "neurodec/preprocess.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neurodec::prep {

using nlohmann::json;

std::string Report::to_json() const {
    json j;
    j["dropped_trials"] = json::array();
    for (const auto& [row, reason] : dropped_trials) {
        j["dropped_trials"].push_back({{"trial_row", row}, {"reason", reason}});
    }
    j["zero_iqr_channels"] = zero_iqr_channels;
    j["zero_variance_vertices"] = zero_variance_vertices;
    j["settings"] = settings;
    return j.dump(2);
}

namespace {

struct Biquad {
    double b0, b1, b2, a1, a2;
};

/// Second-order Butterworth high-pass via the bilinear transform. The
/// numerator has a double zero at z=1, so b0+b1+b2 == 0 exactly.
Biquad butter_highpass(double cutoff_hz, double fs_hz) {
    const double k = std::tan(std::numbers::pi * cutoff_hz / fs_hz);
    const double norm = 1.0 / (1.0 + std::sqrt(2.0) * k + k * k);
    Biquad q;
    q.b0 = norm;
    q.b1 = -2.0 * norm;
    q.b2 = norm;
    q.a1 = 2.0 * (k * k - 1.0) * norm;
    q.a2 = (1.0 - std::sqrt(2.0) * k + k * k) * norm;
    return q;
}

/// Causal filtering, direct form II transposed, with the state initialized
/// to the DC steady state of the first sample so a constant input produces
/// zero output from the start.
void filter_row(const Biquad& q, Matrix& data, Eigen::Index row) {
    const double x0 = data.cols() > 0 ? data(row, 0) : 0.0;
    double s1 = -q.b0 * x0;
    double s2 = q.b2 * x0;
    for (Eigen::Index n = 0; n < data.cols(); ++n) {
        const double in = data(row, n);
        const double out = q.b0 * in + s1;
        s1 = q.b1 * in - q.a1 * out + s2;
        s2 = q.b2 * in - q.a2 * out;
        data(row, n) = out;
    }
}

double bessel_i0(double x) {
    // Power series; converges quickly for the beta values used here.
    double sum = 1.0, term = 1.0;
    const double half_x = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half_x / k) * (half_x / k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

/// Windowed-sinc low-pass, Kaiser window. cutoff is normalized to the
/// sampling rate (cycles/sample), taps odd so the group delay is integer.
std::vector<double> kaiser_lowpass(int taps, double cutoff, double beta) {
    std::vector<double> h(static_cast<std::size_t>(taps));
    const double mid = (taps - 1) / 2.0;
    const double i0b = bessel_i0(beta);
    for (int n = 0; n < taps; ++n) {
        const double m = n - mid;
        const double sinc = m == 0.0 ? 2.0 * cutoff
                                     : std::sin(2.0 * std::numbers::pi * cutoff * m) /
                                           (std::numbers::pi * m);
        const double r = 2.0 * n / (taps - 1.0) - 1.0;
        const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
        h[static_cast<std::size_t>(n)] = sinc * w;
    }
    return h;
}

/// Best rational approximation p/q of x with q <= max_den (Stern-Brocot).
std::pair<std::int64_t, std::int64_t> rational_approx(double x, std::int64_t max_den) {
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double frac = x;
    for (int iter = 0; iter < 64; ++iter) {
        const auto a = static_cast<std::int64_t>(std::floor(frac));
        const std::int64_t p2 = a * p1 + p0;
        const std::int64_t q2 = a * q1 + q0;
        if (q2 > max_den) break;
        p0 = p1; q0 = q1; p1 = p2; q1 = q2;
        const double rem = frac - static_cast<double>(a);
        if (rem < 1e-12) break;
        frac = 1.0 / rem;
    }
    return {p1, q1};
}

/// Polyphase resample by L/M with delay compensation: upsample-by-L,
/// FIR low-pass at min(Nyquist_in, Nyquist_out), downsample-by-M.
Matrix resample_poly(const Matrix& data, std::int64_t up, std::int64_t down) {
    const Eigen::Index n_in = data.cols();
    const Eigen::Index n_out =
        static_cast<Eigen::Index>((static_cast<std::int64_t>(n_in) * up + down - 1) / down);
    const std::int64_t max_lm = std::max(up, down);
    const int taps = static_cast<int>(20 * max_lm + 1);
    const double cutoff = 0.5 / static_cast<double>(max_lm);  // in the upsampled rate
    std::vector<double> h = kaiser_lowpass(taps, cutoff, 5.0);
    for (double& v : h) v *= static_cast<double>(up);  // gain of the zero-stuffing
    const std::int64_t delay = (taps - 1) / 2;

    Matrix out(data.rows(), n_out);
    parallel_for(data.rows(), [&](std::int64_t c) {
        for (Eigen::Index m = 0; m < n_out; ++m) {
            const std::int64_t center = static_cast<std::int64_t>(m) * down + delay;
            double acc = 0.0;
            // x_up[i] nonzero only at multiples of L; walk those taps.
            const std::int64_t i_hi = center / up;
            for (std::int64_t i = i_hi; i >= 0; --i) {
                const std::int64_t k = center - i * up;
                if (k >= taps) break;
                if (i >= n_in) continue;
                acc += h[static_cast<std::size_t>(k)] * data(c, static_cast<Eigen::Index>(i));
            }
            out(c, m) = acc;
        }
    });
    return out;
}

double quantile_linear(std::vector<double>& sorted, double p) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

namespace {

void check_onsets_increasing(const std::vector<Event>& events, const char* what) {
    for (std::size_t e = 1; e < events.size(); ++e) {
        if (events[e].onset_sample <= events[e - 1].onset_sample) {
            throw std::invalid_argument(std::string(what) + ": event onsets must strictly increase");
        }
    }
}

}  // namespace

ContinuousRecording highpass_downsample(const ContinuousRecording& rec, double cutoff_hz,
                                        double target_rate_hz, Report* report) {
    if (rec.sampling_rate_hz <= 0.0) throw std::invalid_argument("highpass_downsample: bad rate");
    check_onsets_increasing(rec.events, "highpass_downsample");
    if (!(cutoff_hz < target_rate_hz / 2.0) || !(target_rate_hz / 2.0 <= rec.sampling_rate_hz / 2.0)) {
        throw std::invalid_argument(
            "highpass_downsample: need cutoff < target_rate/2 <= sampling_rate/2");
    }
    ContinuousRecording out = rec;
    const Biquad hp = butter_highpass(cutoff_hz, rec.sampling_rate_hz);
    for (Eigen::Index c = 0; c < out.data.rows(); ++c) {
        filter_row(hp, out.data, c);
    }

    const auto [up, down] = rational_approx(target_rate_hz / rec.sampling_rate_hz, 1000);
    if (up != down) {
        out.data = resample_poly(out.data, up, down);
        out.sampling_rate_hz = rec.sampling_rate_hz * static_cast<double>(up) /
                               static_cast<double>(down);
        for (auto& ev : out.events) {
            ev.onset_sample = static_cast<std::int64_t>(
                std::llround(static_cast<double>(ev.onset_sample) * static_cast<double>(up) /
                             static_cast<double>(down)));
        }
    }
    if (report != nullptr) {
        report->settings.push_back("highpass butterworth order 2 cutoff " +
                                   std::to_string(cutoff_hz) + " Hz, causal, DC steady-state init");
        report->settings.push_back("resample " + std::to_string(up) + "/" + std::to_string(down) +
                                   " kaiser beta 5.0");
    }
    return out;
}

ContinuousRecording robust_scale_clip(const ContinuousRecording& rec, Report* report) {
    if (rec.data.cols() < 4) {
        throw std::invalid_argument("robust_scale_clip: need >= 4 samples per channel");
    }
    ContinuousRecording out = rec;
    for (Eigen::Index c = 0; c < out.data.rows(); ++c) {
        std::vector<double> sorted(rec.data.cols());
        for (Eigen::Index s = 0; s < rec.data.cols(); ++s) sorted[static_cast<std::size_t>(s)] = rec.data(c, s);
        std::sort(sorted.begin(), sorted.end());
        const double median = quantile_linear(sorted, 0.5);
        double iqr = quantile_linear(sorted, 0.75) - quantile_linear(sorted, 0.25);
        if (iqr <= 0.0) {
            iqr = 1.0;
            if (report != nullptr) report->zero_iqr_channels.push_back(static_cast<int>(c));
        }
        out.data.row(c) = ((rec.data.row(c).array() - median) / iqr).cwiseMin(20.0).cwiseMax(-20.0);
    }
    return out;
}

EpochSet epoch(const ContinuousRecording& rec, std::pair<double, double> window,
               std::optional<std::pair<double, double>> baseline, Report* report) {
    const auto [t0, t1] = window;
    if (!(t0 < t1)) throw std::invalid_argument("epoch: window start must precede end");
    const double rate = rec.sampling_rate_hz;
    const auto t_len = static_cast<Eigen::Index>(std::llround((t1 - t0) * rate));
    if (t_len < 1) throw std::invalid_argument("epoch: window shorter than one sample");
    const auto start_off = static_cast<std::int64_t>(std::llround(t0 * rate));

    std::int64_t b_off = 0, b_len = 0;
    if (baseline.has_value()) {
        b_off = std::llround(baseline->first * rate);
        b_len = std::llround((baseline->second - baseline->first) * rate);
        if (b_len < 1) throw std::invalid_argument("epoch: baseline interval empty at this rate");
    }

    check_onsets_increasing(rec.events, "epoch");
    EpochSet set;
    set.window_start_s = t0;
    set.window_end_s = t1;
    set.rate_hz = rate;
    for (const auto& ev : rec.events) {
        const std::int64_t start = ev.onset_sample + start_off;
        bool in_range = start >= 0 && start + t_len <= rec.data.cols();
        if (in_range && baseline.has_value()) {
            const std::int64_t bs = ev.onset_sample + b_off;
            in_range = bs >= 0 && bs + b_len <= rec.data.cols();
        }
        if (!in_range) {
            if (report != nullptr) {
                report->dropped_trials.emplace_back(ev.trial_row, "window outside recording");
            }
            continue;
        }
        Matrix tensor = rec.data.middleCols(static_cast<Eigen::Index>(start), t_len);
        if (baseline.has_value()) {
            const std::int64_t bs = ev.onset_sample + b_off;
            const Vector ch_mean =
                rec.data.middleCols(static_cast<Eigen::Index>(bs), static_cast<Eigen::Index>(b_len))
                    .rowwise()
                    .mean();
            tensor.colwise() -= ch_mean;
        }
        set.tensors.push_back(std::move(tensor));
        set.trial_rows.push_back(ev.trial_row);
    }
    return set;
}

FmriSeries fmri_detrend_zscore(const FmriSeries& series, double cutoff_period_s, Report* report) {
    const Eigen::Index n = series.data.cols();
    if (n < 2) throw std::invalid_argument("fmri_detrend_zscore: need >= 2 TRs");
    if (!(cutoff_period_s > 2.0 * series.tr_seconds)) {
        throw std::invalid_argument("fmri_detrend_zscore: cutoff period must exceed 2*TR");
    }
    const double run_seconds = static_cast<double>(n) * series.tr_seconds;
    const auto k_max = static_cast<Eigen::Index>(std::floor(2.0 * run_seconds / cutoff_period_s));

    // Orthonormal DCT-II drift basis, constant term included.
    Matrix basis(n, k_max + 1);
    basis.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
    for (Eigen::Index k = 1; k <= k_max; ++k) {
        for (Eigen::Index t = 0; t < n; ++t) {
            basis(t, k) = std::sqrt(2.0 / static_cast<double>(n)) *
                          std::cos(std::numbers::pi * static_cast<double>(k) *
                                   (2.0 * static_cast<double>(t) + 1.0) /
                                   (2.0 * static_cast<double>(n)));
        }
    }

    FmriSeries out = series;
    out.data = series.data - (series.data * basis) * basis.transpose();
    for (Eigen::Index v = 0; v < out.data.rows(); ++v) {
        const double mean = out.data.row(v).mean();
        const double var = (out.data.row(v).array() - mean).square().mean();
        const double orig_mean = series.data.row(v).mean();
        const double orig_var = (series.data.row(v).array() - orig_mean).square().mean();
        // residuals that are pure round-off of the drift fit count as zero
        if (var <= 1e-20 * std::max(orig_var, 1.0)) {
            out.data.row(v).setZero();
            if (report != nullptr) report->zero_variance_vertices.push_back(static_cast<int>(v));
            continue;
        }
        out.data.row(v) = (out.data.row(v).array() - mean) / std::sqrt(var);
    }
    if (report != nullptr) {
        report->settings.push_back("cosine drift cutoff " + std::to_string(cutoff_period_s) +
                                   " s (" + std::to_string(k_max) + " regressors)");
    }
    return out;
}

EpochSet fmri_epoch(const FmriSeries& series, std::pair<double, double> window, Report* report) {
    const auto [t0, t1] = window;
    const double tr = series.tr_seconds;
    if (!(tr > 0.0)) throw std::invalid_argument("fmri_epoch: tr_seconds must be > 0");
    const auto t_len = static_cast<Eigen::Index>(std::floor((t1 - t0) / tr + 1e-9));
    if (t_len < 1) throw std::invalid_argument("fmri_epoch: window spans less than one TR");

    EpochSet set;
    set.window_start_s = t0;
    set.window_end_s = t1;
    set.rate_hz = 1.0 / tr;
    for (const auto& ev : series.events) {
        const auto j0 = static_cast<std::int64_t>(std::ceil((ev.onset_time_s + t0) / tr - 1e-9));
        if (j0 < 0 || j0 + t_len > series.data.cols()) {
            if (report != nullptr) {
                report->dropped_trials.emplace_back(ev.trial_row, "TR window outside run");
            }
            continue;
        }
        set.tensors.push_back(series.data.middleCols(static_cast<Eigen::Index>(j0), t_len));
        set.trial_rows.push_back(ev.trial_row);
    }
    return set;
}

WindowSpec parse_window_spec(const std::string& mode, double width_s, double start_s) {
    WindowSpec spec;
    spec.width_s = width_s;
    spec.start_s = start_s;
    if (mode == "full") {
        spec.mode = WindowSpec::Mode::Full;
    } else if (mode == "sliding") {
        spec.mode = WindowSpec::Mode::Sliding;
    } else if (mode == "growing") {
        spec.mode = WindowSpec::Mode::Growing;
    } else {
        throw std::invalid_argument("unknown window mode: " + mode +
                                    " (expected full|sliding|growing)");
    }
    return spec;
}

std::vector<WindowView> window_views(const EpochSet& epochs, const WindowSpec& spec) {
    std::vector<WindowView> views;
    if (spec.mode == WindowSpec::Mode::Full) {
        views.push_back({epochs, epochs.window_start_s, epochs.window_end_s});
        return views;
    }
    const Eigen::Index t_total = epochs.n_timepoints();
    const auto width = static_cast<Eigen::Index>(std::llround(spec.width_s * epochs.rate_hz));
    if (width < 1 || width > t_total) {
        throw std::invalid_argument("window_views: width must lie in [1 sample, epoch length]");
    }
    auto slice = [&](Eigen::Index lo, Eigen::Index len) {
        EpochSet sub;
        sub.rate_hz = epochs.rate_hz;
        sub.trial_rows = epochs.trial_rows;
        sub.window_start_s = epochs.window_start_s + static_cast<double>(lo) / epochs.rate_hz;
        sub.window_end_s = sub.window_start_s + static_cast<double>(len) / epochs.rate_hz;
        sub.tensors.reserve(epochs.tensors.size());
        for (const auto& t : epochs.tensors) sub.tensors.push_back(t.middleCols(lo, len));
        return sub;
    };

    if (spec.mode == WindowSpec::Mode::Sliding) {
        for (Eigen::Index lo = 0; lo + width <= t_total; lo += width) {
            EpochSet sub = slice(lo, width);
            views.push_back({sub, sub.window_start_s, sub.window_end_s});
        }
        return views;
    }

    // growing: prefixes from start_s (clamped), stepping by width, last one
    // always reaching the epoch end
    auto lo = static_cast<Eigen::Index>(
        std::llround((spec.start_s - epochs.window_start_s) * epochs.rate_hz));
    lo = std::clamp<Eigen::Index>(lo, 0, t_total - 1);
    for (Eigen::Index end = lo + width; end <= t_total; end += width) {
        EpochSet sub = slice(lo, end - lo);
        views.push_back({sub, sub.window_start_s, sub.window_end_s});
    }
    if (views.empty() || views.back().epochs.n_timepoints() != t_total - lo) {
        EpochSet sub = slice(lo, t_total - lo);
        views.push_back({sub, sub.window_start_s, sub.window_end_s});
    }
    return views;
}

}  // namespace neurodec::prep
