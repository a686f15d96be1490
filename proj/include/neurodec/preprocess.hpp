#pragma once

#include "neurodec/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace neurodec::prep {

struct Event {
    std::int64_t onset_sample = 0;  // sample index for M/EEG; TR-grid use is via onset_time
    double onset_time_s = 0.0;
    std::int64_t trial_row = -1;  // row in the accompanying trial table
};

struct ContinuousRecording {
    Matrix data;  // channels x samples
    double sampling_rate_hz = 0.0;
    std::optional<Matrix> channel_positions;  // channels x 2, in [0,1]^2
    std::vector<Event> events;                // onsets strictly increasing
};

struct EpochSet {
    std::vector<Matrix> tensors;  // each channels x T
    double window_start_s = 0.0;
    double window_end_s = 0.0;
    double rate_hz = 0.0;  // samples/s for M/EEG, 1/TR for fMRI
    std::vector<std::int64_t> trial_rows;

    Eigen::Index n_trials() const { return static_cast<Eigen::Index>(tensors.size()); }
    Eigen::Index n_channels() const { return tensors.empty() ? 0 : tensors.front().rows(); }
    Eigen::Index n_timepoints() const { return tensors.empty() ? 0 : tensors.front().cols(); }
};

/// Accumulated notes from a preprocessing run: dropped trials with reasons,
/// degenerate channels, and the filter settings applied.
struct Report {
    std::vector<std::pair<std::int64_t, std::string>> dropped_trials;
    std::vector<int> zero_iqr_channels;
    std::vector<int> zero_variance_vertices;
    std::vector<std::string> settings;

    std::string to_json() const;
};

/// Causal second-order IIR high-pass (DC blocked by a double zero), then a
/// linear-phase FIR anti-alias low-pass and polyphase resampling to
/// target_rate. Event onsets are remapped onto the new sample grid.
ContinuousRecording highpass_downsample(const ContinuousRecording& rec, double cutoff_hz,
                                        double target_rate_hz, Report* report = nullptr);

/// Per-channel robust scaling: subtract the median, divide by the IQR
/// (linear-interpolation quantiles), clamp to [-20, 20].
ContinuousRecording robust_scale_clip(const ContinuousRecording& rec, Report* report = nullptr);

/// Cuts epochs around each event. Baseline, when given, subtracts the
/// channel-wise mean over [b0, b1) per trial. Out-of-range trials drop.
EpochSet epoch(const ContinuousRecording& rec, std::pair<double, double> window,
               std::optional<std::pair<double, double>> baseline = std::nullopt,
               Report* report = nullptr);

struct FmriSeries {
    Matrix data;  // vertices x TRs
    double tr_seconds = 0.0;
    std::vector<Event> events;  // onset_time_s used; sample index ignored
};

/// Projects out a discrete-cosine drift basis (periods >= cutoff_period),
/// then z-scores each vertex over the run.
FmriSeries fmri_detrend_zscore(const FmriSeries& series, double cutoff_period_s = 128.0,
                               Report* report = nullptr);

/// Epochs an fMRI run on its TR grid: T = number of TR sample times in
/// [t0, t1) relative to onset.
EpochSet fmri_epoch(const FmriSeries& series, std::pair<double, double> window,
                    Report* report = nullptr);

struct WindowSpec {
    enum class Mode { Full, Sliding, Growing } mode = Mode::Full;
    double width_s = 0.0;  // sliding window width; also the growing step
    double start_s = 0.0;  // growing-mode start (clamped to the epoch start)
};

WindowSpec parse_window_spec(const std::string& mode, double width_s, double start_s);

struct WindowView {
    EpochSet epochs;
    double label_start_s = 0.0;
    double label_end_s = 0.0;
};

/// Full-epoch, consecutive non-overlapping sliding windows, or growing
/// prefixes (the last growing window always reaches the epoch end).
std::vector<WindowView> window_views(const EpochSet& epochs, const WindowSpec& spec);

}  // namespace neurodec::prep
