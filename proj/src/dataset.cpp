#include "neurodec/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace neurodec {

using nlohmann::json;

std::string device_name(DeviceKind d) {
    switch (d) {
        case DeviceKind::EEG: return "eeg";
        case DeviceKind::MEG: return "meg";
        case DeviceKind::FMRI3T: return "fmri3t";
        case DeviceKind::FMRI7T: return "fmri7t";
    }
    throw std::logic_error("unreachable device kind");
}

DeviceKind parse_device(const std::string& name) {
    if (name == "eeg") return DeviceKind::EEG;
    if (name == "meg") return DeviceKind::MEG;
    if (name == "fmri3t") return DeviceKind::FMRI3T;
    if (name == "fmri7t") return DeviceKind::FMRI7T;
    throw std::invalid_argument("unknown device: " + name + " (expected eeg|meg|fmri3t|fmri7t)");
}

bool is_fmri(DeviceKind d) { return d == DeviceKind::FMRI3T || d == DeviceKind::FMRI7T; }

void DatasetSpec::validate() const {
    if (!(soa_seconds > 0.0)) throw std::invalid_argument("DatasetSpec: soa_seconds must be > 0");
    if (!(epoch_start_s < epoch_end_s)) {
        throw std::invalid_argument("DatasetSpec: epoch window start must precede end");
    }
    if (channels <= 0) throw std::invalid_argument("DatasetSpec: channels must be > 0");
    if (is_fmri(device)) {
        if (!(tr_seconds > 0.0)) throw std::invalid_argument("DatasetSpec: fMRI needs tr_seconds > 0");
    } else {
        if (!(sampling_rate_hz > 0.0)) {
            throw std::invalid_argument("DatasetSpec: M/EEG needs sampling_rate_hz > 0");
        }
    }
}

namespace {

/// Sorts trial ids by (image, subject, repetition) so that seeded shuffles
/// are independent of the caller's row order.
std::vector<TrialId> canonical_order(const std::vector<TrialRecord>& trials,
                                     const std::vector<TrialId>& ids) {
    std::vector<TrialId> out = ids;
    std::sort(out.begin(), out.end(), [&](TrialId a, TrialId b) {
        const auto& ta = trials[static_cast<std::size_t>(a)];
        const auto& tb = trials[static_cast<std::size_t>(b)];
        return std::tie(ta.image_id, ta.subject_id, ta.repetition_index, a) <
               std::tie(tb.image_id, tb.subject_id, tb.repetition_index, b);
    });
    return out;
}

}  // namespace

SplitAssignment make_splits(const std::vector<TrialRecord>& trials,
                            const std::set<int>& test_categories, double valid_fraction,
                            std::uint64_t seed) {
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) {
        throw std::invalid_argument("make_splits: valid_fraction must lie in (0,1)");
    }
    if (test_categories.empty()) {
        throw std::invalid_argument("make_splits: test_categories must be nonempty");
    }
    SplitAssignment out;
    std::vector<TrialId> pool;
    for (TrialId i = 0; i < static_cast<TrialId>(trials.size()); ++i) {
        if (test_categories.count(trials[static_cast<std::size_t>(i)].category_id) > 0) {
            out.test.push_back(i);
        } else {
            pool.push_back(i);
        }
    }
    if (pool.empty()) {
        throw std::invalid_argument("make_splits: no training trials remain after category exclusion");
    }
    pool = canonical_order(trials, pool);
    Rng rng(seed, /*stream=*/0x5b1);
    rng.shuffle(pool);
    const auto n_valid = static_cast<std::size_t>(valid_fraction * static_cast<double>(pool.size()));
    out.valid.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_valid));
    out.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_valid), pool.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.valid.begin(), out.valid.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<TrialId> subsample_test(const std::vector<TrialRecord>& trials, int n_unique,
                                    std::uint64_t seed) {
    std::set<int> images;
    for (const auto& t : trials) images.insert(t.image_id);
    if (static_cast<int>(images.size()) < n_unique) {
        throw std::invalid_argument("subsample_test: only " + std::to_string(images.size()) +
                                    " unique images available, requested " + std::to_string(n_unique));
    }
    std::vector<int> ordered(images.begin(), images.end());
    Rng rng(seed, /*stream=*/0x5b2);
    rng.shuffle(ordered);
    const std::set<int> keep(ordered.begin(), ordered.begin() + n_unique);
    std::vector<TrialId> out;
    for (TrialId i = 0; i < static_cast<TrialId>(trials.size()); ++i) {
        if (keep.count(trials[static_cast<std::size_t>(i)].image_id) > 0) out.push_back(i);
    }
    return out;
}

std::vector<TrialId> matched_trials(const DatasetSpec& dataset,
                                    const std::vector<TrialRecord>& trials, int target_unique,
                                    std::uint64_t seed) {
    (void)dataset;
    if (target_unique <= 0) throw std::invalid_argument("matched_trials: target_unique must be > 0");

    std::set<int> all_images;
    std::map<int, std::set<int>> images_by_subject;
    // (subject, image) -> trial ids of its presentations, canonical order.
    std::map<std::pair<int, int>, std::vector<TrialId>> presentations;
    for (TrialId i = 0; i < static_cast<TrialId>(trials.size()); ++i) {
        const auto& t = trials[static_cast<std::size_t>(i)];
        all_images.insert(t.image_id);
        images_by_subject[t.subject_id].insert(t.image_id);
        presentations[{t.subject_id, t.image_id}].push_back(i);
    }
    if (static_cast<int>(all_images.size()) <= target_unique) {
        std::vector<TrialId> all(trials.size());
        for (std::size_t i = 0; i < trials.size(); ++i) all[i] = static_cast<TrialId>(i);
        return all;
    }

    std::size_t per_subject_total = 0;
    for (const auto& [subj, imgs] : images_by_subject) per_subject_total += imgs.size();
    const bool shared_pool = per_subject_total > all_images.size();

    Rng rng(seed, /*stream=*/0x5b3);
    std::vector<TrialId> out;
    auto pick_one = [&](int subject, int image) {
        auto it = presentations.find({subject, image});
        if (it == presentations.end()) return;
        auto& reps = it->second;
        std::sort(reps.begin(), reps.end(), [&](TrialId a, TrialId b) {
            return trials[static_cast<std::size_t>(a)].repetition_index <
                   trials[static_cast<std::size_t>(b)].repetition_index;
        });
        out.push_back(reps[static_cast<std::size_t>(rng.below(reps.size()))]);
    };

    if (shared_pool) {
        std::vector<int> ordered(all_images.begin(), all_images.end());
        rng.shuffle(ordered);
        ordered.resize(static_cast<std::size_t>(target_unique));
        for (const auto& [subj, imgs] : images_by_subject) {
            for (int img : ordered) {
                if (imgs.count(img) > 0) pick_one(subj, img);
            }
        }
    } else {
        for (const auto& [subj, imgs] : images_by_subject) {
            std::vector<int> ordered(imgs.begin(), imgs.end());
            rng.shuffle(ordered);
            if (static_cast<int>(ordered.size()) > target_unique) {
                ordered.resize(static_cast<std::size_t>(target_unique));
            }
            for (int img : ordered) pick_one(subj, img);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void write_trials_csv(const std::filesystem::path& file, const std::vector<TrialRecord>& trials) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << "subject_id,image_id,category_id,repetition_index,session_id,onset_time\n";
    out.precision(17);
    for (const auto& t : trials) {
        out << t.subject_id << ',' << t.image_id << ',' << t.category_id << ','
            << t.repetition_index << ',' << t.session_id << ',' << t.onset_time << '\n';
    }
}

std::vector<TrialRecord> read_trials_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty trial table: " + file.string());
    std::vector<TrialRecord> trials;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        TrialRecord t;
        std::getline(ss, cell, ','); t.subject_id = std::stoi(cell);
        std::getline(ss, cell, ','); t.image_id = std::stoi(cell);
        std::getline(ss, cell, ','); t.category_id = std::stoi(cell);
        std::getline(ss, cell, ','); t.repetition_index = std::stoi(cell);
        std::getline(ss, cell, ','); t.session_id = std::stoi(cell);
        std::getline(ss, cell, ','); t.onset_time = std::stod(cell);
        if (t.repetition_index < 1) {
            throw std::runtime_error("trial table: repetition_index must be >= 1");
        }
        trials.push_back(t);
    }
    return trials;
}

void write_splits_json(const std::filesystem::path& file, const SplitAssignment& splits) {
    json j;
    j["train"] = splits.train;
    j["valid"] = splits.valid;
    j["test"] = splits.test;
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << j.dump(2) << "\n";
}

SplitAssignment read_splits_json(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    json j = json::parse(in);
    SplitAssignment s;
    s.train = j.at("train").get<std::vector<TrialId>>();
    s.valid = j.at("valid").get<std::vector<TrialId>>();
    s.test = j.at("test").get<std::vector<TrialId>>();
    return s;
}

std::string dataset_spec_to_json(const DatasetSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["device"] = device_name(spec.device);
    j["num_subjects"] = spec.num_subjects;
    j["channels"] = spec.channels;
    j["sampling_rate_hz"] = spec.sampling_rate_hz;
    j["tr_seconds"] = spec.tr_seconds;
    j["soa_seconds"] = spec.soa_seconds;
    j["epoch_window"] = {spec.epoch_start_s, spec.epoch_end_s};
    j["hourly_cost_usd"] = spec.hourly_cost_usd;
    return j.dump(2);
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetSpec s;
    s.name = j.value("name", "unnamed");
    s.device = parse_device(j.at("device").get<std::string>());
    s.num_subjects = j.value("num_subjects", 1);
    s.channels = j.at("channels").get<int>();
    s.sampling_rate_hz = j.value("sampling_rate_hz", 0.0);
    s.tr_seconds = j.value("tr_seconds", 0.0);
    s.soa_seconds = j.at("soa_seconds").get<double>();
    const auto win = j.at("epoch_window").get<std::vector<double>>();
    if (win.size() != 2) throw std::invalid_argument("epoch_window must have two entries");
    s.epoch_start_s = win[0];
    s.epoch_end_s = win[1];
    s.hourly_cost_usd = j.value("hourly_cost_usd", 0.0);
    s.validate();
    return s;
}

std::vector<DatasetCostRow> builtin_dataset_table() {
    auto meeg = [](std::string name, DeviceKind dev, int subj, int ch, double soa, double t0,
                   double cost, std::int64_t n) {
        DatasetCostRow r;
        r.spec = {std::move(name), dev, subj, ch, 1000.0, 0.0, soa, t0, 1.0, cost};
        r.train_valid_trials = n;
        return r;
    };
    auto fmri = [](std::string name, DeviceKind dev, int subj, double tr, double soa, double t0,
                   double t1, double cost, std::int64_t n) {
        DatasetCostRow r;
        r.spec = {std::move(name), dev, subj, 20484, 0.0, tr, soa, t0, t1, cost};
        r.train_valid_trials = n;
        return r;
    };
    return {
        meeg("Xu2024", DeviceKind::EEG, 8, 64, 0.6, -0.3, 263.0, 34868),
        meeg("Grootswagers2022", DeviceKind::EEG, 48, 64, 0.1, -0.1, 263.0, 943892),
        meeg("Gifford2022", DeviceKind::EEG, 10, 64, 0.2, -0.2, 263.0, 668400),
        meeg("Hebart2023meg", DeviceKind::MEG, 4, 272, 1.6, -0.5, 550.0, 79392),
        fmri("Shen2019", DeviceKind::FMRI3T, 3, 2.0, 8.0, 3.0, 13.0, 935.0, 19800),
        fmri("Hebart2023fmri", DeviceKind::FMRI3T, 3, 1.5, 4.5, 3.0, 10.5, 935.0, 22284),
        fmri("Chang2019", DeviceKind::FMRI3T, 4, 2.0, 10.0, 3.0, 13.0, 935.0, 17255),
        fmri("Allen2022", DeviceKind::FMRI7T, 4, 1.6, 4.0, 3.0, 11.0, 1093.0, 108000),
    };
}

}  // namespace neurodec
