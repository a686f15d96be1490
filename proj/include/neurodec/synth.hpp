#pragma once

#include "neurodec/common.hpp"
#include "neurodec/dataset.hpp"
#include "neurodec/preprocess.hpp"

#include <map>
#include <string>
#include <vector>

namespace neurodec::synth {

struct SynthConfig {
    DeviceKind device = DeviceKind::EEG;
    int channels = 32;
    int timepoints = 48;
    int embed_dim = 16;
    int n_images = 120;
    int n_reps = 4;
    int n_subjects = 2;
    double snr = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static SynthConfig from_json(const std::string& text);
};

/// Linear generative model standing in for the recorded neural response:
/// per-subject sensor mixing of the image embedding, an analytic temporal
/// kernel with unit peak, iid Gaussian noise scaled from the target SNR.
struct ForwardModel {
    std::vector<Matrix> mixing;  // per subject, channels x F
    Vector temporal_kernel;      // sampled on the epoch grid, unit peak
    double noise_scale = 0.0;
    Matrix sensor_positions;     // channels x 2
};

struct SynthDataset {
    std::vector<Matrix> epochs;  // one channels x timepoints tensor per trial
    Matrix embeddings;           // n_images x F
    std::vector<TrialRecord> trials;
    Matrix sensor_positions;
    DatasetSpec spec;
    ForwardModel model;
};

/// Kernel value at time t (seconds relative to stimulus onset): causal
/// biphasic oscillation for M/EEG, gamma-shaped bump for fMRI.
double response_kernel(DeviceKind device, double t);

SynthDataset generate(const SynthConfig& config);

/// Desk-scale defaults per device; SNR strictly ordered
/// fmri7t > fmri3t > meg > eeg.
std::map<DeviceKind, SynthConfig> device_presets();

/// Matching desk-scale acquisition profile (rates, windows, SOA, cost).
DatasetSpec desk_dataset_spec(DeviceKind device);

struct ContinuousSynth {
    std::vector<prep::ContinuousRecording> recordings;  // one per subject
    Matrix embeddings;
    std::vector<TrialRecord> trials;
    Matrix sensor_positions;
    DatasetSpec spec;
};

/// Continuous M/EEG stream at a higher rate: responses placed at seeded
/// onsets over a noise background, for exercising the filtering/epoching
/// pipeline end to end.
ContinuousSynth generate_continuous_meeg(const SynthConfig& config, double rate_hz,
                                         double soa_seconds);

struct FmriSynth {
    std::vector<prep::FmriSeries> runs;  // one per subject
    Matrix embeddings;
    std::vector<TrialRecord> trials;
    DatasetSpec spec;
};

/// fMRI run per subject on the TR grid, with a slow drift component so the
/// detrending step has something real to remove.
FmriSynth generate_continuous_fmri(const SynthConfig& config, double tr_seconds,
                                   double soa_seconds);

}  // namespace neurodec::synth
