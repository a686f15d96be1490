#pragma once

#include "neurodec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace neurodec {

enum class DeviceKind { EEG, MEG, FMRI3T, FMRI7T };

std::string device_name(DeviceKind d);
DeviceKind parse_device(const std::string& name);
bool is_fmri(DeviceKind d);

/// Recording-device and acquisition-protocol description for one dataset.
/// For M/EEG sampling_rate_hz is set; for fMRI tr_seconds is set.
struct DatasetSpec {
    std::string name;
    DeviceKind device = DeviceKind::EEG;
    int num_subjects = 1;
    int channels = 1;
    double sampling_rate_hz = 0.0;
    double tr_seconds = 0.0;
    double soa_seconds = 1.0;
    double epoch_start_s = 0.0;
    double epoch_end_s = 1.0;
    double hourly_cost_usd = 0.0;

    void validate() const;
};

struct TrialRecord {
    int subject_id = 0;
    int image_id = 0;
    int category_id = 0;
    int repetition_index = 1;  // 1-based
    int session_id = 0;
    double onset_time = 0.0;
};

using TrialId = std::int64_t;  // index into a trial table

struct SplitAssignment {
    std::vector<TrialId> train;
    std::vector<TrialId> valid;
    std::vector<TrialId> test;
};

/// Category-leakage-free train/valid/test split. Every trial whose category
/// is in `test_categories` goes to test; the validation set is
/// floor(valid_fraction * pool) trials sampled at trial level.
SplitAssignment make_splits(const std::vector<TrialRecord>& trials,
                            const std::set<int>& test_categories, double valid_fraction,
                            std::uint64_t seed);

/// Keeps n_unique randomly chosen image ids and all their repetitions.
std::vector<TrialId> subsample_test(const std::vector<TrialRecord>& trials, int n_unique,
                                    std::uint64_t seed);

/// Downsamples a training pool to approximately target_unique images. When
/// subjects share an image pool, target_unique images are drawn once and one
/// presentation per subject is kept for each; when per-subject image sets are
/// disjoint, target_unique images are drawn per subject. Datasets smaller
/// than the target are returned unchanged.
std::vector<TrialId> matched_trials(const DatasetSpec& dataset,
                                    const std::vector<TrialRecord>& trials, int target_unique,
                                    std::uint64_t seed);

void write_trials_csv(const std::filesystem::path& file, const std::vector<TrialRecord>& trials);
std::vector<TrialRecord> read_trials_csv(const std::filesystem::path& file);

void write_splits_json(const std::filesystem::path& file, const SplitAssignment& splits);
SplitAssignment read_splits_json(const std::filesystem::path& file);

std::string dataset_spec_to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

/// Acquisition facts for the eight public benchmark datasets: protocol SOA,
/// device rates, and train+valid trial counts in the all-trials setting.
/// These feed the cost model and the bundled CLI tables.
struct DatasetCostRow {
    DatasetSpec spec;
    std::int64_t train_valid_trials = 0;
};
std::vector<DatasetCostRow> builtin_dataset_table();

}  // namespace neurodec
