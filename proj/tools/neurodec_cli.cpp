// Command-line surface for the decoding benchmark kit: synthetic data
// generation, preprocessing, splits, ridge/deep training, evaluation,
// scaling-law fits, parameter counting, and metric aggregation.

#include "neurodec/dataset.hpp"
#include "neurodec/loss.hpp"
#include "neurodec/metrics.hpp"
#include "neurodec/model.hpp"
#include "neurodec/preprocess.hpp"
#include "neurodec/ridge.hpp"
#include "neurodec/scaling.hpp"
#include "neurodec/stats.hpp"
#include "neurodec/synth.hpp"
#include "neurodec/tensorio.hpp"
#include "neurodec/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neurodec;

namespace {

std::string read_text(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << text;
    if (text.empty() || text.back() != '\n') out << "\n";
}

std::string format_grouped(std::int64_t value) {
    std::string digits = std::to_string(value);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count > 0 && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        ++count;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& argv, const std::string& config_text,
                    const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& inputs, double wall_s) {
    io::RunManifest m;
    m.command = command;
    m.argv = argv;
    m.config_hash = io::fnv1a_hash(config_text);
    m.seeds = seeds;
    m.input_paths = inputs;
    m.version = io::build_version();
    m.wall_time_s = wall_s;
    m.write(dir);
}

// ---------------------------------------------------------------------------
// epoch dataset directory layout

struct EpochData {
    std::vector<Matrix> epochs;
    std::vector<std::int64_t> trial_rows;
    Matrix embeddings;
    Matrix sensor_positions;  // may be empty for fMRI
    std::vector<TrialRecord> trials;
    DatasetSpec spec;
    double window_start = 0.0;
    double window_end = 0.0;
};

io::Tensor epochs_to_tensor(const std::vector<Matrix>& epochs) {
    const auto n = static_cast<std::int64_t>(epochs.size());
    const std::int64_t s = epochs.empty() ? 0 : epochs.front().rows();
    const std::int64_t t = epochs.empty() ? 0 : epochs.front().cols();
    io::Tensor out;
    out.dtype = io::Dtype::F64;
    out.shape = {n, s, t};
    out.values.resize(static_cast<std::size_t>(n * s * t));
    for (std::int64_t i = 0; i < n; ++i) {
        const Matrix& e = epochs[static_cast<std::size_t>(i)];
        for (std::int64_t c = 0; c < s; ++c) {
            for (std::int64_t j = 0; j < t; ++j) {
                out.values[static_cast<std::size_t>(i * s * t + c * t + j)] = e(c, j);
            }
        }
    }
    return out;
}

std::vector<Matrix> tensor_to_epochs(const io::Tensor& t) {
    if (t.shape.size() != 3) throw std::runtime_error("epochs tensor must be rank 3");
    std::vector<Matrix> out;
    const std::int64_t n = t.shape[0], s = t.shape[1], len = t.shape[2];
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Matrix e(s, len);
        for (std::int64_t c = 0; c < s; ++c) {
            for (std::int64_t j = 0; j < len; ++j) {
                e(c, j) = t.values[static_cast<std::size_t>(i * s * len + c * len + j)];
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

void save_epoch_data(const fs::path& dir, const EpochData& data) {
    fs::create_directories(dir);
    io::TensorContainer c;
    c.tensors["epochs"] = epochs_to_tensor(data.epochs);
    io::Tensor rows;
    rows.dtype = io::Dtype::F64;
    rows.shape = {static_cast<std::int64_t>(data.trial_rows.size())};
    for (std::int64_t r : data.trial_rows) rows.values.push_back(static_cast<double>(r));
    c.tensors["trial_rows"] = rows;
    c.tensors["embeddings"] = io::Tensor::from_matrix(data.embeddings);
    if (data.sensor_positions.size() > 0) {
        c.tensors["sensor_positions"] = io::Tensor::from_matrix(data.sensor_positions);
    }
    c.write(dir);
    write_trials_csv(dir / "trials.csv", data.trials);
    write_text(dir / "dataset.json", dataset_spec_to_json(data.spec));
    json w;
    w["window_start_s"] = data.window_start;
    w["window_end_s"] = data.window_end;
    write_text(dir / "window.json", w.dump(2));
}

EpochData load_epoch_data(const fs::path& dir) {
    EpochData data;
    const io::TensorContainer c = io::TensorContainer::read(dir);
    data.epochs = tensor_to_epochs(c.at("epochs"));
    for (double v : c.at("trial_rows").values) {
        data.trial_rows.push_back(static_cast<std::int64_t>(v));
    }
    data.embeddings = c.at("embeddings").as_matrix();
    if (c.tensors.count("sensor_positions") > 0) {
        data.sensor_positions = c.at("sensor_positions").as_matrix();
    }
    data.trials = read_trials_csv(dir / "trials.csv");
    data.spec = dataset_spec_from_json(read_text(dir / "dataset.json"));
    const json w = json::parse(read_text(dir / "window.json"));
    data.window_start = w.at("window_start_s").get<double>();
    data.window_end = w.at("window_end_s").get<double>();
    if (data.epochs.size() != data.trial_rows.size()) {
        throw std::runtime_error("epoch container invariant violated: trial_rows length "
                                 "does not match the epoch count");
    }
    return data;
}

prep::EpochSet to_epoch_set(const EpochData& data) {
    prep::EpochSet set;
    set.tensors = data.epochs;
    set.trial_rows = data.trial_rows;
    set.window_start_s = data.window_start;
    set.window_end_s = data.window_end;
    set.rate_hz = is_fmri(data.spec.device) ? 1.0 / data.spec.tr_seconds
                                            : data.spec.sampling_rate_hz;
    return set;
}

/// Maps split trial ids (rows in trials.csv) onto epoch indices.
std::vector<std::int64_t> epoch_indices_for(const std::vector<TrialId>& ids,
                                            const std::vector<std::int64_t>& trial_rows) {
    std::map<std::int64_t, std::int64_t> lookup;
    for (std::size_t i = 0; i < trial_rows.size(); ++i) {
        lookup[trial_rows[i]] = static_cast<std::int64_t>(i);
    }
    std::vector<std::int64_t> out;
    out.reserve(ids.size());
    for (TrialId id : ids) {
        auto it = lookup.find(id);
        if (it != lookup.end()) out.push_back(it->second);
    }
    return out;
}

Matrix targets_for(const EpochData& data) {
    Matrix t(static_cast<Eigen::Index>(data.epochs.size()), data.embeddings.cols());
    for (std::size_t i = 0; i < data.epochs.size(); ++i) {
        const auto row = static_cast<std::size_t>(data.trial_rows[i]);
        t.row(static_cast<Eigen::Index>(i)) = data.embeddings.row(data.trials[row].image_id);
    }
    return t;
}

Matrix flatten(const std::vector<Matrix>& epochs, const std::vector<std::int64_t>& idx) {
    const Eigen::Index s = epochs.front().rows();
    const Eigen::Index t = epochs.front().cols();
    Matrix out(static_cast<Eigen::Index>(idx.size()), s * t);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Matrix& e = epochs[static_cast<std::size_t>(idx[i])];
        for (Eigen::Index c = 0; c < s; ++c) {
            out.block(static_cast<Eigen::Index>(i), c * t, 1, t) = e.row(c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// metric records

struct MetricRow {
    std::string dataset;
    std::string device;
    int subjects = 0;
    std::int64_t n_train_trials = 0;
    double window_start = 0.0;
    double window_end = 0.0;
    std::string averaging;
    std::uint64_t seed = 0;
    double pearson_r = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
};

const std::vector<std::string> kMetricHeader = {
    "dataset",   "device", "subjects",  "n_train_trials", "window_start", "window_end",
    "averaging", "seed",   "pearson_r", "top1",           "top5"};

void write_metric_rows(const fs::path& file, const std::vector<MetricRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        std::ostringstream ws, we, pr, t1, t5;
        ws.precision(9); we.precision(9); pr.precision(9); t1.precision(9); t5.precision(9);
        ws << r.window_start; we << r.window_end; pr << r.pearson_r; t1 << r.top1; t5 << r.top5;
        cells.push_back({r.dataset, r.device, std::to_string(r.subjects),
                         std::to_string(r.n_train_trials), ws.str(), we.str(), r.averaging,
                         std::to_string(r.seed), pr.str(), t1.str(), t5.str()});
    }
    io::write_csv(file, kMetricHeader, cells);
}

std::vector<MetricRow> read_metric_rows(const fs::path& file) {
    std::vector<std::string> header;
    const auto cells = io::read_csv(file, &header);
    if (header != kMetricHeader) {
        throw std::runtime_error("metric csv header mismatch in " + file.string());
    }
    std::vector<MetricRow> rows;
    for (const auto& c : cells) {
        MetricRow r;
        r.dataset = c[0];
        r.device = c[1];
        r.subjects = std::stoi(c[2]);
        r.n_train_trials = std::stoll(c[3]);
        r.window_start = std::stod(c[4]);
        r.window_end = std::stod(c[5]);
        r.averaging = c[6];
        r.seed = std::stoull(c[7]);
        r.pearson_r = std::stod(c[8]);
        r.top1 = std::stod(c[9]);
        r.top5 = std::stod(c[10]);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// subcommand implementations

int cmd_synth(const std::string& config_path, const std::string& device, std::uint64_t seed,
              const fs::path& out, bool continuous, const std::vector<std::string>& argv) {
    Timer timer;
    synth::SynthConfig cfg;
    if (!config_path.empty()) {
        cfg = synth::SynthConfig::from_json(read_text(config_path));
    } else {
        cfg = synth::device_presets()[parse_device(device)];
    }
    cfg.seed = seed;

    fs::create_directories(out);
    if (continuous) {
        io::TensorContainer c;
        std::vector<TrialRecord> trials;
        DatasetSpec spec;
        Matrix embeddings;
        if (is_fmri(cfg.device)) {
            const DatasetSpec desk = synth::desk_dataset_spec(cfg.device);
            const synth::FmriSynth runs =
                synth::generate_continuous_fmri(cfg, desk.tr_seconds, desk.soa_seconds);
            for (std::size_t s = 0; s < runs.runs.size(); ++s) {
                c.tensors["fmri_run_s" + std::to_string(s)] =
                    io::Tensor::from_matrix(runs.runs[s].data);
            }
            trials = runs.trials;
            spec = runs.spec;
            embeddings = runs.embeddings;
        } else {
            // generate at 3x the desk rate so the preprocess stage has real
            // filtering and decimation to do
            const DatasetSpec desk = synth::desk_dataset_spec(cfg.device);
            const double hi_rate = 3.0 * desk.sampling_rate_hz;
            const synth::ContinuousSynth cont =
                synth::generate_continuous_meeg(cfg, hi_rate, desk.soa_seconds);
            for (std::size_t s = 0; s < cont.recordings.size(); ++s) {
                c.tensors["continuous_s" + std::to_string(s)] =
                    io::Tensor::from_matrix(cont.recordings[s].data);
            }
            c.tensors["sensor_positions"] = io::Tensor::from_matrix(cont.sensor_positions);
            trials = cont.trials;
            spec = cont.spec;
            spec.sampling_rate_hz = hi_rate;
            embeddings = cont.embeddings;
        }
        c.tensors["embeddings"] = io::Tensor::from_matrix(embeddings);
        c.write(out);
        write_trials_csv(out / "trials.csv", trials);
        write_text(out / "dataset.json", dataset_spec_to_json(spec));
    } else {
        const synth::SynthDataset data = synth::generate(cfg);
        EpochData e;
        e.epochs = data.epochs;
        e.trial_rows.resize(data.trials.size());
        for (std::size_t i = 0; i < data.trials.size(); ++i) {
            e.trial_rows[i] = static_cast<std::int64_t>(i);
        }
        e.embeddings = data.embeddings;
        e.sensor_positions = data.sensor_positions;
        e.trials = data.trials;
        e.spec = data.spec;
        e.spec.num_subjects = cfg.n_subjects;
        e.window_start = data.spec.epoch_start_s;
        e.window_end = data.spec.epoch_end_s;
        save_epoch_data(out, e);
    }
    write_text(out / "synth_config.json", cfg.to_json());
    write_manifest(out, "synth", argv, cfg.to_json(), {seed}, {config_path}, timer.seconds());
    std::cout << "synth: wrote " << out.string() << "\n";
    return 0;
}

int cmd_preprocess(const fs::path& in, const fs::path& out, double cutoff, double target_rate,
                   const std::vector<std::string>& argv) {
    Timer timer;
    const io::TensorContainer c = io::TensorContainer::read(in);
    const auto trials = read_trials_csv(in / "trials.csv");
    DatasetSpec spec = dataset_spec_from_json(read_text(in / "dataset.json"));
    prep::Report report;

    EpochData data;
    data.trials = trials;
    data.embeddings = c.at("embeddings").as_matrix();

    if (is_fmri(spec.device)) {
        for (int s = 0;; ++s) {
            const std::string key = "fmri_run_s" + std::to_string(s);
            if (c.tensors.count(key) == 0) break;
            prep::FmriSeries run;
            run.data = c.at(key).as_matrix();
            run.tr_seconds = spec.tr_seconds;
            for (std::size_t i = 0; i < trials.size(); ++i) {
                if (trials[i].subject_id != s) continue;
                run.events.push_back({0, trials[i].onset_time, static_cast<std::int64_t>(i)});
            }
            const prep::FmriSeries clean = prep::fmri_detrend_zscore(run, 128.0, &report);
            const prep::EpochSet set =
                prep::fmri_epoch(clean, {spec.epoch_start_s, spec.epoch_end_s}, &report);
            for (Eigen::Index i = 0; i < set.n_trials(); ++i) {
                data.epochs.push_back(set.tensors[static_cast<std::size_t>(i)]);
                data.trial_rows.push_back(set.trial_rows[static_cast<std::size_t>(i)]);
            }
        }
    } else {
        const Matrix positions = c.at("sensor_positions").as_matrix();
        data.sensor_positions = positions;
        for (int s = 0;; ++s) {
            const std::string key = "continuous_s" + std::to_string(s);
            if (c.tensors.count(key) == 0) break;
            prep::ContinuousRecording rec;
            rec.data = c.at(key).as_matrix();
            rec.sampling_rate_hz = spec.sampling_rate_hz;
            rec.channel_positions = positions;
            for (std::size_t i = 0; i < trials.size(); ++i) {
                if (trials[i].subject_id != s) continue;
                rec.events.push_back(
                    {static_cast<std::int64_t>(std::llround(trials[i].onset_time *
                                                            spec.sampling_rate_hz)),
                     trials[i].onset_time, static_cast<std::int64_t>(i)});
            }
            const prep::ContinuousRecording filtered =
                prep::highpass_downsample(rec, cutoff, target_rate, &report);
            const prep::ContinuousRecording scaled = prep::robust_scale_clip(filtered, &report);
            const prep::EpochSet set =
                prep::epoch(scaled, {spec.epoch_start_s, spec.epoch_end_s},
                            {{spec.epoch_start_s, 0.0}}, &report);
            for (Eigen::Index i = 0; i < set.n_trials(); ++i) {
                data.epochs.push_back(set.tensors[static_cast<std::size_t>(i)]);
                data.trial_rows.push_back(set.trial_rows[static_cast<std::size_t>(i)]);
            }
        }
        spec.sampling_rate_hz = target_rate;
    }
    if (data.epochs.empty()) {
        throw std::runtime_error("preprocess: no epochs survived; check windows and recordings");
    }
    data.spec = spec;
    data.window_start = spec.epoch_start_s;
    data.window_end = spec.epoch_end_s;
    save_epoch_data(out, data);
    write_text(out / "preprocess_report.json", report.to_json());
    write_manifest(out, "preprocess", argv, report.to_json(), {}, {in.string()}, timer.seconds());
    std::cout << "preprocess: " << data.epochs.size() << " epochs -> " << out.string() << "\n";
    return 0;
}

int cmd_split(const fs::path& data_dir, const fs::path& out, double valid_fraction,
              double test_category_fraction, const std::string& test_categories_arg,
              int subsample, int matched, std::uint64_t seed,
              const std::vector<std::string>& argv) {
    Timer timer;
    const auto trials = read_trials_csv(data_dir / "trials.csv");
    const DatasetSpec spec = dataset_spec_from_json(read_text(data_dir / "dataset.json"));

    std::set<int> test_categories;
    if (!test_categories_arg.empty()) {
        std::stringstream ss(test_categories_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) test_categories.insert(std::stoi(tok));
    } else {
        std::set<int> all;
        for (const auto& t : trials) all.insert(t.category_id);
        std::vector<int> cats(all.begin(), all.end());
        Rng rng(seed, /*stream=*/0x9a);
        rng.shuffle(cats);
        const auto n = std::max<std::size_t>(
            1, static_cast<std::size_t>(test_category_fraction * static_cast<double>(cats.size())));
        if (n >= cats.size()) {
            throw std::invalid_argument("split: test categories would swallow every trial");
        }
        test_categories.insert(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>(n));
    }

    SplitAssignment splits = make_splits(trials, test_categories, valid_fraction, seed);

    if (matched > 0) {
        std::vector<TrialId> pool = splits.train;
        pool.insert(pool.end(), splits.valid.begin(), splits.valid.end());
        std::vector<TrialRecord> pool_trials;
        std::vector<TrialId> pool_ids;
        for (TrialId id : pool) {
            pool_trials.push_back(trials[static_cast<std::size_t>(id)]);
            pool_ids.push_back(id);
        }
        const std::vector<TrialId> kept_local = matched_trials(spec, pool_trials, matched, seed);
        std::set<TrialId> kept;
        for (TrialId local : kept_local) kept.insert(pool_ids[static_cast<std::size_t>(local)]);
        auto filter = [&](std::vector<TrialId>& ids) {
            std::vector<TrialId> out_ids;
            for (TrialId id : ids) {
                if (kept.count(id) > 0) out_ids.push_back(id);
            }
            ids = std::move(out_ids);
        };
        filter(splits.train);
        filter(splits.valid);
    }

    if (subsample > 0) {
        std::vector<TrialRecord> test_trials;
        std::vector<TrialId> test_ids;
        for (TrialId id : splits.test) {
            test_trials.push_back(trials[static_cast<std::size_t>(id)]);
            test_ids.push_back(id);
        }
        const std::vector<TrialId> kept_local = subsample_test(test_trials, subsample, seed);
        std::vector<TrialId> kept;
        for (TrialId local : kept_local) kept.push_back(test_ids[static_cast<std::size_t>(local)]);
        splits.test = kept;
    }

    write_splits_json(out, splits);
    json cfg;
    cfg["valid_fraction"] = valid_fraction;
    cfg["seed"] = seed;
    write_manifest(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "split", argv,
                   cfg.dump(), {seed}, {data_dir.string()}, timer.seconds());
    std::cout << "split: train " << splits.train.size() << ", valid " << splits.valid.size()
              << ", test " << splits.test.size() << " -> " << out.string() << "\n";
    return 0;
}

nn::MeegModuleConfig desk_meeg_model(const EpochData& data) {
    nn::MeegModuleConfig mc;
    mc.in_channels = static_cast<int>(data.epochs.front().rows());
    mc.timepoints = static_cast<int>(data.epochs.front().cols());
    mc.sa_out = 24;
    mc.sa_harmonics = 4;
    mc.hidden = 16;
    mc.n_blocks = 1;
    mc.backbone_out = 32;
    mc.embed_dim = static_cast<int>(data.embeddings.cols());
    mc.n_subjects = data.spec.num_subjects;
    return mc;
}

nn::FmriModuleConfig desk_fmri_model(const EpochData& data) {
    nn::FmriModuleConfig mc;
    mc.in_vertices = static_cast<int>(data.epochs.front().rows());
    mc.n_trs = static_cast<int>(data.epochs.front().cols());
    mc.hidden = 32;
    mc.n_blocks = 1;
    mc.clip_head = true;
    mc.embed_dim = static_cast<int>(data.embeddings.cols());
    mc.n_subjects = data.spec.num_subjects;
    return mc;
}

struct WindowPlan {
    std::vector<prep::WindowView> views;
};

WindowPlan plan_windows(const EpochData& data, const std::string& mode, double width,
                        double start) {
    const prep::EpochSet set = to_epoch_set(data);
    double w = width;
    if (w <= 0.0) {
        // defaults: one TR for fMRI, 300 ms at the desk rate for M/EEG
        w = is_fmri(data.spec.device) ? data.spec.tr_seconds : 0.3;
    }
    double s = start;
    if (mode == "growing" && start == 0.0) s = data.window_start;
    WindowPlan plan;
    plan.views = prep::window_views(set, prep::parse_window_spec(mode, w, s));
    return plan;
}

int cmd_train(const fs::path& data_dir, const fs::path& splits_path, const std::string& mode,
              const fs::path& out, std::uint64_t seed, const std::string& train_config_path,
              const std::string& model_config_path, const std::string& window_mode,
              double window_width, double window_start, const std::vector<std::string>& argv) {
    Timer timer;
    const EpochData data = load_epoch_data(data_dir);
    const SplitAssignment splits = read_splits_json(splits_path);
    const Matrix targets = targets_for(data);

    train::TrainConfig tc;
    if (!train_config_path.empty()) tc = train::TrainConfig::from_json(read_text(train_config_path));
    tc.seed = seed;

    const WindowPlan plan = plan_windows(data, window_mode, window_width, window_start);
    fs::create_directories(out);
    json windows_meta = json::array();

    const auto train_idx = epoch_indices_for(splits.train, data.trial_rows);
    const auto valid_idx = epoch_indices_for(splits.valid, data.trial_rows);
    if (train_idx.empty() || valid_idx.empty()) {
        throw std::runtime_error("train: empty train or valid split after epoch mapping");
    }
    std::vector<int> subject_ids;
    subject_ids.reserve(data.trial_rows.size());
    for (std::int64_t row : data.trial_rows) {
        subject_ids.push_back(data.trials[static_cast<std::size_t>(row)].subject_id);
    }

    for (std::size_t w = 0; w < plan.views.size(); ++w) {
        const prep::EpochSet& view = plan.views[w].epochs;
        const fs::path wdir = out / ("window_" + std::to_string(w));
        fs::create_directories(wdir);

        if (mode == "ridge") {
            // the linear baseline trains on train+valid; alpha comes from the
            // loo-gcv path inside ridge_fit
            std::vector<std::int64_t> fit_idx = train_idx;
            fit_idx.insert(fit_idx.end(), valid_idx.begin(), valid_idx.end());
            const Matrix x = flatten(view.tensors, fit_idx);
            Matrix y(static_cast<Eigen::Index>(fit_idx.size()), targets.cols());
            for (std::size_t i = 0; i < fit_idx.size(); ++i) {
                y.row(static_cast<Eigen::Index>(i)) = targets.row(fit_idx[i]);
            }
            const ridge::RidgeFit fit = ridge::ridge_fit(x, y, ridge::default_decode_grid());
            io::TensorContainer c;
            c.tensors["weights"] = io::Tensor::from_matrix(fit.weights);
            io::Tensor intercept;
            intercept.dtype = io::Dtype::F64;
            intercept.shape = {fit.intercept.size()};
            intercept.values.assign(fit.intercept.data(),
                                    fit.intercept.data() + fit.intercept.size());
            c.tensors["intercept"] = intercept;
            c.write(wdir);
            json meta;
            meta["kind"] = "ridge";
            meta["alpha_selected"] = fit.alpha_selected;
            meta["n_fit_rows"] = fit_idx.size();
            write_text(wdir / "model.json", meta.dump(2));
        } else {
            train::TrainData td;
            td.epochs = &view.tensors;
            td.subject_ids = &subject_ids;
            td.targets = &targets;
            td.train_rows = train_idx;
            td.valid_rows = valid_idx;

            if (is_fmri(data.spec.device)) {
                nn::FmriModuleConfig mc =
                    model_config_path.empty()
                        ? desk_fmri_model(data)
                        : nn::FmriModuleConfig::from_json(read_text(model_config_path));
                mc.n_trs = static_cast<int>(view.tensors.front().cols());
                const nn::FmriModule module(mc);
                const train::TrainResult result =
                    train::train(module, module.init_params(seed), td, tc);
                nn::save_checkpoint(wdir, result.best_params, "fmri", mc.to_json());
                train::write_history_csv(wdir / "history.csv", result.history);
            } else {
                nn::MeegModuleConfig mc =
                    model_config_path.empty()
                        ? desk_meeg_model(data)
                        : nn::MeegModuleConfig::from_json(read_text(model_config_path));
                mc.timepoints = static_cast<int>(view.tensors.front().cols());
                const Matrix positions = data.sensor_positions.size() > 0
                                             ? data.sensor_positions
                                             : nn::default_sensor_grid(mc.in_channels);
                const nn::MeegModule module(mc, positions);
                const train::TrainResult result =
                    train::train(module, module.init_params(seed), td, tc);
                nn::save_checkpoint(wdir, result.best_params, "meeg", mc.to_json(), &positions);
                train::write_history_csv(wdir / "history.csv", result.history);
            }
        }
        json entry;
        entry["index"] = w;
        entry["start_s"] = plan.views[w].label_start_s;
        entry["end_s"] = plan.views[w].label_end_s;
        windows_meta.push_back(entry);
    }

    json meta;
    meta["mode"] = mode;
    meta["windows"] = windows_meta;
    meta["n_train_trials"] = splits.train.size() + splits.valid.size();
    write_text(out / "windows.json", meta.dump(2));
    write_manifest(out, "train", argv, meta.dump() + tc.to_json(), {seed},
                   {data_dir.string(), splits_path.string()}, timer.seconds());
    std::cout << "train: " << plan.views.size() << " window model(s) -> " << out.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& data_dir, const fs::path& model_dir, const fs::path& splits_path,
             const fs::path& out, const std::string& averaging, std::uint64_t seed,
             const std::string& window_mode, double window_width, double window_start,
             const std::vector<std::string>& argv) {
    Timer timer;
    const EpochData data = load_epoch_data(data_dir);
    const SplitAssignment splits = read_splits_json(splits_path);
    const json train_meta = json::parse(read_text(model_dir / "windows.json"));
    const std::string mode = train_meta.at("mode").get<std::string>();
    const auto n_train_trials = train_meta.at("n_train_trials").get<std::int64_t>();
    const metrics::AveragingScope scope = metrics::parse_averaging(averaging);

    const WindowPlan plan = plan_windows(data, window_mode, window_width, window_start);
    if (plan.views.size() != train_meta.at("windows").size()) {
        throw std::runtime_error(
            "eval: window plan does not match the trained checkpoints; pass the same --window "
            "flags used at training time");
    }
    for (std::size_t w = 0; w < plan.views.size(); ++w) {
        const auto& meta = train_meta.at("windows").at(w);
        if (std::fabs(meta.at("start_s").get<double>() - plan.views[w].label_start_s) > 1e-9 ||
            std::fabs(meta.at("end_s").get<double>() - plan.views[w].label_end_s) > 1e-9) {
            throw std::runtime_error(
                "eval: window bounds differ from the trained checkpoints; pass the same --window "
                "flags used at training time");
        }
    }

    const auto test_idx = epoch_indices_for(splits.test, data.trial_rows);
    if (test_idx.empty()) throw std::runtime_error("eval: empty test split after epoch mapping");

    // candidate pool: unique test images with their true embeddings
    std::set<int> test_images;
    for (std::int64_t i : test_idx) {
        test_images.insert(
            data.trials[static_cast<std::size_t>(data.trial_rows[static_cast<std::size_t>(i)])]
                .image_id);
    }
    std::vector<int> candidate_ids(test_images.begin(), test_images.end());
    Matrix candidates(static_cast<Eigen::Index>(candidate_ids.size()), data.embeddings.cols());
    for (std::size_t i = 0; i < candidate_ids.size(); ++i) {
        candidates.row(static_cast<Eigen::Index>(i)) = data.embeddings.row(candidate_ids[i]);
    }

    std::vector<MetricRow> rows;
    for (std::size_t w = 0; w < plan.views.size(); ++w) {
        const prep::EpochSet& view = plan.views[w].epochs;
        const fs::path wdir = model_dir / ("window_" + std::to_string(w));

        metrics::PredictionSet mse_preds, clip_preds;
        auto push_predictions = [&](const Matrix& mse, const Matrix& clip) {
            for (std::size_t i = 0; i < test_idx.size(); ++i) {
                const auto& trial = data.trials[static_cast<std::size_t>(
                    data.trial_rows[static_cast<std::size_t>(test_idx[i])])];
                metrics::PredRow row;
                row.subject_id = trial.subject_id;
                row.image_id = trial.image_id;
                row.repetition_index = trial.repetition_index;
                row.head = metrics::Head::Mse;
                row.vector = mse.row(static_cast<Eigen::Index>(i)).transpose();
                mse_preds.push_back(row);
                row.head = metrics::Head::Clip;
                row.vector = clip.row(static_cast<Eigen::Index>(i)).transpose();
                clip_preds.push_back(row);
            }
        };

        if (mode == "ridge") {
            const io::TensorContainer c = io::TensorContainer::read(wdir);
            ridge::RidgeFit fit;
            fit.weights = c.at("weights").as_matrix();
            const io::Tensor& b = c.at("intercept");
            fit.intercept = Eigen::Map<const Vector>(b.values.data(),
                                                     static_cast<Eigen::Index>(b.values.size()));
            const Matrix x = flatten(view.tensors, test_idx);
            const Matrix pred = ridge::ridge_predict(fit, x);
            push_predictions(pred, pred);
        } else {
            const nn::Checkpoint ckpt = nn::load_checkpoint(wdir);
            std::vector<Matrix> batch;
            std::vector<int> subject_ids;
            for (std::int64_t i : test_idx) {
                batch.push_back(view.tensors[static_cast<std::size_t>(i)]);
                subject_ids.push_back(
                    data.trials[static_cast<std::size_t>(
                                    data.trial_rows[static_cast<std::size_t>(i)])]
                        .subject_id);
            }
            nn::ModelParams params = ckpt.params;
            nn::HeadOutputs outputs;
            if (ckpt.kind == "fmri") {
                const nn::FmriModule module(nn::FmriModuleConfig::from_json(ckpt.config_json));
                outputs = module.forward(params, batch, subject_ids, nn::Mode::Eval);
            } else {
                const nn::MeegModule module(nn::MeegModuleConfig::from_json(ckpt.config_json),
                                            ckpt.sensor_positions);
                outputs = module.forward(params, batch, subject_ids, nn::Mode::Eval);
            }
            push_predictions(outputs.mse, outputs.clip);
        }

        const metrics::PredictionSet mse_avg = metrics::average_predictions(mse_preds, scope);
        const metrics::PredictionSet clip_avg = metrics::average_predictions(clip_preds, scope);
        Matrix pred(static_cast<Eigen::Index>(mse_avg.size()), data.embeddings.cols());
        Matrix truth(static_cast<Eigen::Index>(mse_avg.size()), data.embeddings.cols());
        for (std::size_t i = 0; i < mse_avg.size(); ++i) {
            pred.row(static_cast<Eigen::Index>(i)) = mse_avg[i].vector.transpose();
            truth.row(static_cast<Eigen::Index>(i)) = data.embeddings.row(mse_avg[i].image_id);
        }

        MetricRow row;
        row.dataset = data.spec.name;
        row.device = device_name(data.spec.device);
        row.subjects = data.spec.num_subjects;
        row.n_train_trials = n_train_trials;
        row.window_start = plan.views[w].label_start_s;
        row.window_end = plan.views[w].label_end_s;
        row.averaging = averaging;
        row.seed = seed;
        row.pearson_r = metrics::pearson_featurewise(pred, truth);
        row.top1 = metrics::topk_accuracy(clip_avg, candidates, candidate_ids, 1);
        row.top5 = metrics::topk_accuracy(clip_avg, candidates, candidate_ids,
                                          std::min<int>(5, static_cast<int>(candidate_ids.size())));
        rows.push_back(row);
    }

    fs::create_directories(out);
    write_metric_rows(out / "metrics.csv", rows);
    write_manifest(out, "eval", argv, averaging, {seed},
                   {data_dir.string(), model_dir.string(), splits_path.string()}, timer.seconds());
    std::cout << "eval: " << rows.size() << " metric row(s) -> " << (out / "metrics.csv").string()
              << "\n";
    return 0;
}

int cmd_scale_fit(const std::vector<std::string>& metrics_files, const std::string& x_kind_name,
                  const fs::path& out, double threshold, const std::string& rates_path,
                  const std::vector<std::string>& argv) {
    Timer timer;
    const scaling::XKind x_kind = scaling::parse_xkind(x_kind_name);
    scaling::CostTable rates = rates_path.empty() ? scaling::CostTable::defaults()
                                                  : scaling::CostTable::read_json(rates_path);

    // SOA lookup: bundled table plus desk-scale synthetic profiles
    std::map<std::string, DatasetSpec> known;
    for (const auto& row : builtin_dataset_table()) known[row.spec.name] = row.spec;
    for (DeviceKind dev :
         {DeviceKind::EEG, DeviceKind::MEG, DeviceKind::FMRI3T, DeviceKind::FMRI7T}) {
        const DatasetSpec spec = synth::desk_dataset_spec(dev);
        known[spec.name] = spec;
    }

    std::vector<std::pair<double, double>> points;
    std::string label = "all";
    for (const auto& file : metrics_files) {
        for (const MetricRow& row : read_metric_rows(file)) {
            double x = static_cast<double>(row.n_train_trials);
            if (x_kind != scaling::XKind::Trials) {
                auto it = known.find(row.dataset);
                if (it == known.end()) {
                    throw std::runtime_error("scale-fit: unknown dataset '" + row.dataset +
                                             "', cannot derive hours or cost");
                }
                const double hours = scaling::recording_time_hours(
                    static_cast<double>(row.n_train_trials), it->second.soa_seconds);
                x = x_kind == scaling::XKind::Hours
                        ? hours
                        : hours * rates.rate(parse_device(row.device));
            }
            points.emplace_back(x, row.pearson_r);
            label = row.device;
        }
    }
    const scaling::ScalingFit fit = scaling::fit_loglinear(points, x_kind);
    json j = json::parse(scaling::fit_to_json(fit, label));
    if (threshold > 0.0) {
        j["threshold_r"] = threshold;
        j["threshold_x"] = scaling::solve_threshold(fit, threshold);
    }
    j["plateau_detected"] = scaling::detect_plateau(points);
    write_text(out, j.dump(2));
    write_manifest(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "scale-fit",
                   argv, j.dump(), {}, metrics_files, timer.seconds());
    std::cout << "scale-fit: slope " << fit.slope << " (sem " << fit.sem_slope << ") -> "
              << out.string() << "\n";
    return 0;
}

int cmd_paramcount(const std::string& device_name_arg, const std::string& size_name_arg,
                   bool searched, const std::string& out_dir,
                   const std::vector<std::string>& argv) {
    Timer timer;
    const DeviceKind device = parse_device(device_name_arg);
    const nn::ModelSize size = nn::parse_size(size_name_arg);

    std::vector<nn::LayerCount> rows;
    std::int64_t total = 0;
    if (is_fmri(device)) {
        const nn::FmriModuleConfig cfg = nn::reference_fmri_config(size);
        const nn::FmriModule module(cfg);
        const nn::ModelParams layout = module.param_layout();
        rows = module.layer_counts(layout);
        total = layout.trainable_count();
    } else {
        const nn::MeegModuleConfig cfg = searched ? nn::searched_meeg_config(device, size)
                                                  : nn::reference_meeg_config(device, size);
        const nn::MeegModule module(cfg, nn::default_sensor_grid(cfg.in_channels));
        const nn::ModelParams layout = module.param_layout();
        rows = module.layer_counts(layout);
        total = layout.trainable_count();
    }
    for (const auto& row : rows) {
        std::cout << row.layer << ": " << format_grouped(row.params) << "\n";
    }
    std::cout << "Total: " << format_grouped(total) << "\n";
    if (!out_dir.empty()) {
        json j;
        j["device"] = device_name_arg;
        j["size"] = size_name_arg;
        j["total"] = total;
        for (const auto& row : rows) j["layers"][row.layer] = row.params;
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "paramcount.json", j.dump(2));
        write_manifest(out_dir, "paramcount", argv, j.dump(), {}, {}, timer.seconds());
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& metrics_files, const fs::path& out,
               const std::vector<std::string>& argv) {
    Timer timer;
    struct Key {
        std::string dataset, device, averaging;
        int subjects;
        std::int64_t n_train;
        double w0, w1;
        bool operator<(const Key& o) const {
            return std::tie(dataset, device, averaging, subjects, n_train, w0, w1) <
                   std::tie(o.dataset, o.device, o.averaging, o.subjects, o.n_train, o.w0, o.w1);
        }
    };
    std::map<Key, std::vector<MetricRow>> groups;
    for (const auto& file : metrics_files) {
        for (const MetricRow& row : read_metric_rows(file)) {
            groups[Key{row.dataset, row.device, row.averaging, row.subjects, row.n_train_trials,
                       row.window_start, row.window_end}]
                .push_back(row);
        }
    }
    std::vector<std::vector<std::string>> cells;
    for (const auto& [key, rows] : groups) {
        auto mean_sem = [&](auto getter) {
            double mean = 0.0;
            for (const auto& r : rows) mean += getter(r);
            mean /= static_cast<double>(rows.size());
            double var = 0.0;
            for (const auto& r : rows) var += (getter(r) - mean) * (getter(r) - mean);
            const double sem = rows.size() > 1
                                   ? std::sqrt(var / static_cast<double>(rows.size() - 1)) /
                                         std::sqrt(static_cast<double>(rows.size()))
                                   : 0.0;
            return std::make_pair(mean, sem);
        };
        const auto [r_mean, r_sem] = mean_sem([](const MetricRow& r) { return r.pearson_r; });
        const auto [t1_mean, t1_sem] = mean_sem([](const MetricRow& r) { return r.top1; });
        const auto [t5_mean, t5_sem] = mean_sem([](const MetricRow& r) { return r.top5; });
        std::ostringstream w0, w1, rm, rs, t1m, t1s, t5m, t5s;
        w0 << key.w0;
        w1 << key.w1;
        rm.precision(9); rm << r_mean;
        rs.precision(9); rs << r_sem;
        t1m.precision(9); t1m << t1_mean;
        t1s.precision(9); t1s << t1_sem;
        t5m.precision(9); t5m << t5_mean;
        t5s.precision(9); t5s << t5_sem;
        cells.push_back({key.dataset, key.device, std::to_string(key.subjects),
                         std::to_string(key.n_train), w0.str(), w1.str(), key.averaging,
                         std::to_string(rows.size()), rm.str(), rs.str(), t1m.str(), t1s.str(),
                         t5m.str(), t5s.str()});
    }
    io::write_csv(out,
                  {"dataset", "device", "subjects", "n_train_trials", "window_start", "window_end",
                   "averaging", "n_seeds", "pearson_r_mean", "pearson_r_sem", "top1_mean",
                   "top1_sem", "top5_mean", "top5_sem"},
                  cells);
    write_manifest(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "report", argv,
                   "", {}, metrics_files, timer.seconds());
    std::cout << "report: " << cells.size() << " group(s) -> " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"brain-to-image decoding benchmark kit"};
    app.require_subcommand(1);
    std::vector<std::string> argv_copy(argv, argv + argc);

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic paired dataset");
    std::string synth_config, synth_device = "eeg", synth_out;
    std::uint64_t synth_seed = 0;
    bool synth_continuous = false;
    synth_cmd->add_option("--config", synth_config, "SynthConfig JSON path");
    synth_cmd->add_option("--device", synth_device, "preset device")
        ->check(CLI::IsMember({"eeg", "meg", "fmri3t", "fmri7t"}));
    synth_cmd->add_option("--seed", synth_seed, "generation seed")->required();
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_flag("--continuous", synth_continuous,
                        "emit continuous recordings instead of epochs");

    auto* prep_cmd = app.add_subcommand("preprocess", "filter/scale/epoch a continuous dataset");
    std::string prep_in, prep_out;
    double prep_cutoff = 0.1, prep_rate = 40.0;
    prep_cmd->add_option("--in", prep_in)->required();
    prep_cmd->add_option("--out", prep_out)->required();
    prep_cmd->add_option("--cutoff", prep_cutoff, "high-pass cutoff Hz (M/EEG)");
    prep_cmd->add_option("--target-rate", prep_rate, "output rate Hz (M/EEG)");

    auto* split_cmd = app.add_subcommand("split", "build train/valid/test assignments");
    std::string split_data, split_out, split_cats;
    double split_valid = 0.2, split_test_frac = 0.2;
    int split_subsample = 0, split_matched = 0;
    std::uint64_t split_seed = 0;
    split_cmd->add_option("--data", split_data, "dataset directory")->required();
    split_cmd->add_option("--out", split_out, "splits JSON path")->required();
    split_cmd->add_option("--seed", split_seed)->required();
    split_cmd->add_option("--valid-fraction", split_valid);
    split_cmd->add_option("--test-category-fraction", split_test_frac);
    split_cmd->add_option("--test-categories", split_cats, "comma-separated category ids");
    split_cmd->add_option("--subsample-test", split_subsample, "unique test images to keep");
    split_cmd->add_option("--matched", split_matched, "matched-trials target unique images");

    auto* train_cmd = app.add_subcommand("train", "fit a ridge or deep decoder");
    std::string train_data, train_splits, train_mode = "ridge", train_out, train_cfg, model_cfg;
    std::string train_window = "full";
    double train_w_width = 0.0, train_w_start = 0.0;
    std::uint64_t train_seed = 0;
    train_cmd->add_option("--data", train_data)->required();
    train_cmd->add_option("--splits", train_splits)->required();
    train_cmd->add_option("--mode", train_mode)->check(CLI::IsMember({"ridge", "deep"}));
    train_cmd->add_option("--out", train_out)->required();
    train_cmd->add_option("--seed", train_seed)->required();
    train_cmd->add_option("--config", train_cfg, "TrainConfig JSON");
    train_cmd->add_option("--model-config", model_cfg, "module config JSON");
    train_cmd->add_option("--window", train_window)
        ->check(CLI::IsMember({"full", "sliding", "growing"}));
    train_cmd->add_option("--window-width", train_w_width, "window width in seconds");
    train_cmd->add_option("--window-start", train_w_start, "growing-window start in seconds");

    auto* eval_cmd = app.add_subcommand("eval", "score a trained decoder on the test split");
    std::string eval_data, eval_model, eval_splits, eval_out, eval_avg = "single";
    std::string eval_window = "full";
    double eval_w_width = 0.0, eval_w_start = 0.0;
    std::uint64_t eval_seed = 0;
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--model", eval_model)->required();
    eval_cmd->add_option("--splits", eval_splits)->required();
    eval_cmd->add_option("--out", eval_out)->required();
    eval_cmd->add_option("--seed", eval_seed)->required();
    eval_cmd->add_option("--averaging", eval_avg)
        ->check(CLI::IsMember({"single", "subject", "instance"}));
    eval_cmd->add_option("--window", eval_window)
        ->check(CLI::IsMember({"full", "sliding", "growing"}));
    eval_cmd->add_option("--window-width", eval_w_width);
    eval_cmd->add_option("--window-start", eval_w_start);

    auto* scale_cmd = app.add_subcommand("scale-fit", "log-linear scaling fit over metric rows");
    std::vector<std::string> scale_metrics;
    std::string scale_x = "trials", scale_out, scale_rates;
    double scale_threshold = 0.0;
    scale_cmd->add_option("--metrics", scale_metrics, "metric CSV files")->required();
    scale_cmd->add_option("--x", scale_x)->check(CLI::IsMember({"trials", "hours", "usd"}));
    scale_cmd->add_option("--out", scale_out)->required();
    scale_cmd->add_option("--threshold", scale_threshold, "solve for x reaching this R");
    scale_cmd->add_option("--rates", scale_rates, "hourly cost table JSON");

    auto* count_cmd = app.add_subcommand("paramcount", "print per-layer parameter counts");
    std::string count_device, count_size = "large", count_out;
    bool count_searched = false;
    count_cmd->add_option("--device", count_device)
        ->check(CLI::IsMember({"eeg", "meg", "fmri3t", "fmri7t"}))
        ->required();
    count_cmd->add_option("--size", count_size)->check(CLI::IsMember({"medium", "large"}));
    count_cmd->add_flag("--searched", count_searched,
                        "use the alternate hyperparameter-table labeling");
    count_cmd->add_option("--out", count_out, "optional output directory");

    auto* report_cmd = app.add_subcommand("report", "aggregate metric rows into plot-ready CSV");
    std::vector<std::string> report_metrics;
    std::string report_out;
    report_cmd->add_option("--in", report_metrics, "metric CSV files")->required();
    report_cmd->add_option("--out", report_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) {
            return cmd_synth(synth_config, synth_device, synth_seed, synth_out, synth_continuous,
                             argv_copy);
        }
        if (*prep_cmd) return cmd_preprocess(prep_in, prep_out, prep_cutoff, prep_rate, argv_copy);
        if (*split_cmd) {
            return cmd_split(split_data, split_out, split_valid, split_test_frac, split_cats,
                             split_subsample, split_matched, split_seed, argv_copy);
        }
        if (*train_cmd) {
            return cmd_train(train_data, train_splits, train_mode, train_out, train_seed,
                             train_cfg, model_cfg, train_window, train_w_width, train_w_start,
                             argv_copy);
        }
        if (*eval_cmd) {
            return cmd_eval(eval_data, eval_model, eval_splits, eval_out, eval_avg, eval_seed,
                            eval_window, eval_w_width, eval_w_start, argv_copy);
        }
        if (*scale_cmd) {
            return cmd_scale_fit(scale_metrics, scale_x, scale_out, scale_threshold, scale_rates,
                                 argv_copy);
        }
        if (*count_cmd) {
            return cmd_paramcount(count_device, count_size, count_searched, count_out, argv_copy);
        }
        if (*report_cmd) return cmd_report(report_metrics, report_out, argv_copy);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
