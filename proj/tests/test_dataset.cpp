#include <doctest.h>

#include "neurodec/dataset.hpp"

#include <filesystem>
#include <map>
#include <set>

using namespace neurodec;

namespace {

std::vector<TrialRecord> grid_trials(int n_images, int n_reps, int n_subjects,
                                     int images_per_category = 4) {
    std::vector<TrialRecord> trials;
    for (int s = 0; s < n_subjects; ++s) {
        for (int i = 0; i < n_images; ++i) {
            for (int r = 1; r <= n_reps; ++r) {
                TrialRecord t;
                t.subject_id = s;
                t.image_id = i;
                t.category_id = i / images_per_category;
                t.repetition_index = r;
                t.onset_time = static_cast<double>(trials.size());
                trials.push_back(t);
            }
        }
    }
    return trials;
}

}  // namespace

TEST_CASE("make_splits excludes test categories from train and valid") {
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 10; ++i) {
        TrialRecord t;
        t.image_id = i;
        t.category_id = i < 6 ? 0 : 1;  // categories A=0, B=1
        trials.push_back(t);
    }
    const SplitAssignment s = make_splits(trials, {1}, 0.2, 7);
    CHECK(s.test.size() == 4);
    for (TrialId id : s.train) CHECK(trials[id].category_id == 0);
    for (TrialId id : s.valid) CHECK(trials[id].category_id == 0);
}

TEST_CASE("make_splits is deterministic and uses the exact floor count") {
    const auto trials = grid_trials(250, 1, 1);  // no test categories -> pool of 1000? use 1000 below
    std::vector<TrialRecord> pool = grid_trials(1001, 1, 1);
    // one category reserved for test; 1001 images / 4 per category
    const int test_cat = 250;  // holds image 1000 only
    const SplitAssignment a = make_splits(pool, {test_cat}, 0.2, 42);
    const SplitAssignment b = make_splits(pool, {test_cat}, 0.2, 42);
    CHECK(a.train == b.train);
    CHECK(a.valid == b.valid);
    CHECK(a.test == b.test);
    CHECK(a.train.size() + a.valid.size() == 1000);
    CHECK(a.valid.size() == 200);  // floor(0.2 * 1000), exact
    const SplitAssignment c = make_splits(pool, {test_cat}, 0.2, 43);
    CHECK(a.valid != c.valid);
}

TEST_CASE("make_splits rejects an empty pool and bad fractions") {
    auto trials = grid_trials(4, 1, 1);
    CHECK_THROWS_AS(make_splits(trials, {0}, 0.2, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(trials, {}, 0.2, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(trials, {0}, 1.0, 1), std::invalid_argument);
}

TEST_CASE("make_splits leakage property over random synthetic tables") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto trials = grid_trials(40, 3, 2);
        const SplitAssignment s = make_splits(trials, {0, 3, 7}, 0.25, seed);
        std::set<int> fit_cats, test_cats;
        for (TrialId id : s.train) fit_cats.insert(trials[id].category_id);
        for (TrialId id : s.valid) fit_cats.insert(trials[id].category_id);
        for (TrialId id : s.test) test_cats.insert(trials[id].category_id);
        for (int c : fit_cats) CHECK(test_cats.count(c) == 0);
        CHECK(s.train.size() + s.valid.size() + s.test.size() == trials.size());
    }
}

TEST_CASE("subsample_test keeps all repetitions of the sampled images") {
    const auto trials = grid_trials(200, 12, 1);
    const auto kept = subsample_test(trials, 100, 11);
    std::set<int> images;
    std::map<int, int> reps;
    for (TrialId id : kept) {
        images.insert(trials[id].image_id);
        reps[trials[id].image_id]++;
    }
    CHECK(images.size() == 100);
    CHECK(kept.size() == 1200);
    for (const auto& [img, n] : reps) CHECK(n == 12);

    // identity when n equals the available count
    const auto all = subsample_test(trials, 200, 11);
    CHECK(all.size() == trials.size());

    CHECK(subsample_test(trials, 100, 5) == subsample_test(trials, 100, 5));
    CHECK_THROWS_AS(subsample_test(trials, 201, 5), std::invalid_argument);
}

TEST_CASE("matched_trials shared-pool design samples one presentation per subject") {
    const DatasetSpec spec = []{
        DatasetSpec s;
        s.name = "things-like";
        s.device = DeviceKind::MEG;
        s.channels = 4;
        s.sampling_rate_hz = 100.0;
        s.soa_seconds = 1.0;
        s.epoch_start_s = -0.1;
        s.epoch_end_s = 1.0;
        return s;
    }();
    const auto trials = grid_trials(20, 3, 2);
    const auto kept = matched_trials(spec, trials, 5, 3);
    CHECK(kept.size() == 10);  // 5 images x 1 presentation x 2 subjects
    std::set<std::pair<int, int>> subject_image;
    for (TrialId id : kept) {
        const auto& t = trials[id];
        CHECK(subject_image.emplace(t.subject_id, t.image_id).second);  // one rep each
    }
    std::set<int> images;
    for (TrialId id : kept) images.insert(trials[id].image_id);
    CHECK(images.size() == 5);
}

TEST_CASE("matched_trials: 10 images, 3 reps, target 5 gives 5 single-rep picks") {
    DatasetSpec spec;
    spec.device = DeviceKind::EEG;
    spec.channels = 4;
    spec.sampling_rate_hz = 100.0;
    spec.soa_seconds = 0.2;
    spec.epoch_start_s = -0.1;
    spec.epoch_end_s = 1.0;
    const auto trials = grid_trials(10, 3, 1);
    const auto kept = matched_trials(spec, trials, 5, 2);
    CHECK(kept.size() == 5);
    std::set<int> images;
    for (TrialId id : kept) images.insert(trials[id].image_id);
    CHECK(images.size() == 5);
}

TEST_CASE("matched_trials keeps small datasets unchanged") {
    const DatasetSpec spec = []{
        DatasetSpec s;
        s.device = DeviceKind::FMRI3T;
        s.channels = 4;
        s.tr_seconds = 2.0;
        s.soa_seconds = 8.0;
        s.epoch_start_s = 3.0;
        s.epoch_end_s = 13.0;
        return s;
    }();
    const auto trials = grid_trials(10, 3, 2);
    const auto kept = matched_trials(spec, trials, 7428, 3);
    CHECK(kept.size() == trials.size());
}

TEST_CASE("matched_trials independent-image design samples per subject") {
    DatasetSpec spec;
    spec.device = DeviceKind::FMRI7T;
    spec.channels = 4;
    spec.tr_seconds = 1.6;
    spec.soa_seconds = 4.0;
    spec.epoch_start_s = 3.0;
    spec.epoch_end_s = 11.0;
    // subject 0 sees images 0..9, subject 1 sees 10..19, 3 reps each
    std::vector<TrialRecord> trials;
    for (int s = 0; s < 2; ++s) {
        for (int i = 0; i < 10; ++i) {
            for (int r = 1; r <= 3; ++r) {
                TrialRecord t;
                t.subject_id = s;
                t.image_id = s * 10 + i;
                t.category_id = t.image_id / 4;
                t.repetition_index = r;
                trials.push_back(t);
            }
        }
    }
    const auto kept = matched_trials(spec, trials, 5, 9);
    CHECK(kept.size() == 10);  // 5 per subject, one presentation each
    std::map<int, int> by_subject;
    for (TrialId id : kept) by_subject[trials[id].subject_id]++;
    CHECK(by_subject[0] == 5);
    CHECK(by_subject[1] == 5);
}

TEST_CASE("matched_trials reproduces the reference downsampling count") {
    // 19,848 shared images, 1 presentation each, 4 subjects; target 7,428
    DatasetSpec spec;
    spec.name = "things-meg-like";
    spec.device = DeviceKind::MEG;
    spec.channels = 4;
    spec.sampling_rate_hz = 1200.0;
    spec.soa_seconds = 1.6;
    spec.epoch_start_s = -0.5;
    spec.epoch_end_s = 1.0;
    std::vector<TrialRecord> trials;
    trials.reserve(19848 * 4);
    for (int s = 0; s < 4; ++s) {
        for (int i = 0; i < 19848; ++i) {
            TrialRecord t;
            t.subject_id = s;
            t.image_id = i;
            t.category_id = i / 4;
            t.repetition_index = 1;
            trials.push_back(t);
        }
    }
    const auto kept = matched_trials(spec, trials, 7428, 5);
    CHECK(kept.size() == 29712);  // 7,428 images x 4 subjects
}

TEST_CASE("trial csv and splits json round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "neurodec_test_dataset";
    std::filesystem::create_directories(dir);
    const auto trials = grid_trials(6, 2, 2);
    write_trials_csv(dir / "trials.csv", trials);
    const auto loaded = read_trials_csv(dir / "trials.csv");
    REQUIRE(loaded.size() == trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
        CHECK(loaded[i].subject_id == trials[i].subject_id);
        CHECK(loaded[i].image_id == trials[i].image_id);
        CHECK(loaded[i].category_id == trials[i].category_id);
        CHECK(loaded[i].repetition_index == trials[i].repetition_index);
        CHECK(loaded[i].onset_time == doctest::Approx(trials[i].onset_time));
    }
    const SplitAssignment s = make_splits(trials, {0}, 0.3, 5);
    write_splits_json(dir / "splits.json", s);
    const SplitAssignment r = read_splits_json(dir / "splits.json");
    CHECK(r.train == s.train);
    CHECK(r.valid == s.valid);
    CHECK(r.test == s.test);
    std::filesystem::remove_all(dir);
}

TEST_CASE("builtin dataset table carries the published acquisition facts") {
    const auto table = builtin_dataset_table();
    REQUIRE(table.size() == 8);
    CHECK(table[0].spec.name == "Xu2024");
    CHECK(table[7].spec.name == "Allen2022");
    for (const auto& row : table) {
        CHECK(row.spec.soa_seconds > 0.0);
        CHECK(row.train_valid_trials > 0);
        row.spec.validate();
    }
}
