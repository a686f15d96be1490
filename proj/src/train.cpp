#include "neurodec/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace neurodec::train {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (patience > max_epochs) {
        throw std::invalid_argument("TrainConfig: patience must not exceed max_epochs");
    }
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) {
        throw std::invalid_argument("TrainConfig: valid_fraction must lie in (0,1)");
    }
    loss.validate();
}

std::string TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["valid_fraction"] = valid_fraction;
    j["seed"] = seed;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["epsilon"] = epsilon;
    j["lambda"] = loss.lambda;
    j["tau"] = loss.tau;
    j["monitor"] = monitor == Monitor::CombinedLoss ? "combined_loss" : "pearson_r";
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    c.lr = j.value("lr", 3e-4);
    c.batch_size = j.value("batch_size", 32);
    c.max_epochs = j.value("max_epochs", 50);
    c.patience = j.value("patience", 10);
    c.valid_fraction = j.value("valid_fraction", 0.2);
    c.seed = j.value("seed", std::uint64_t{0});
    c.beta1 = j.value("beta1", 0.9);
    c.beta2 = j.value("beta2", 0.999);
    c.epsilon = j.value("epsilon", 1e-8);
    c.loss.lambda = j.value("lambda", 0.25);
    c.loss.tau = j.value("tau", 1.0);
    const std::string monitor = j.value("monitor", "combined_loss");
    if (monitor == "combined_loss") {
        c.monitor = Monitor::CombinedLoss;
    } else if (monitor == "pearson_r") {
        c.monitor = Monitor::PearsonR;
    } else {
        throw std::invalid_argument("TrainConfig: unknown monitor " + monitor);
    }
    c.validate();
    return c;
}

AdamOptimizer::AdamOptimizer(const nn::ModelParams& params, double lr, double beta1, double beta2,
                             double epsilon)
    : m_(params.zeros_like()),
      v_(params.zeros_like()),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {}

void AdamOptimizer::step(nn::ModelParams& params, const nn::ModelParams& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t s = 0; s < params.segments.size(); ++s) {
        auto& seg = params.segments[s];
        if (!seg.trainable) continue;
        const Vector& g = grads.segments[s].values;
        Vector& m = m_.segments[s].values;
        Vector& v = v_.segments[s].values;
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = (beta2_ * v.array() + (1.0 - beta2_) * g.array().square()).matrix();
        const Eigen::ArrayXd m_hat = m.array() / bc1;
        const Eigen::ArrayXd v_hat = v.array() / bc2;
        seg.values.array() -= lr_ * m_hat / (v_hat.sqrt() + epsilon_);
    }
}

void write_history_csv(const std::filesystem::path& file, const std::vector<EpochStats>& history) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << "epoch,train_loss,valid_loss,valid_R\n";
    out.precision(12);
    for (const auto& row : history) {
        out << row.epoch << ',' << row.train_loss << ',' << row.valid_loss << ',' << row.valid_r
            << '\n';
    }
}

namespace internal {

metrics::FeatureStats train_target_stats(const TrainData& data) {
    Matrix train_targets(static_cast<Eigen::Index>(data.train_rows.size()), data.targets->cols());
    for (std::size_t i = 0; i < data.train_rows.size(); ++i) {
        train_targets.row(static_cast<Eigen::Index>(i)) = data.targets->row(data.train_rows[i]);
    }
    metrics::FeatureStats stats = metrics::feature_stats(train_targets);
    for (Eigen::Index f = 0; f < stats.stddev.size(); ++f) {
        if (stats.stddev(f) <= 0.0) stats.stddev(f) = 1.0;
    }
    return stats;
}

Batch gather(const TrainData& data, const std::vector<std::int64_t>& rows,
             const metrics::FeatureStats& stats) {
    Batch b;
    b.epochs.reserve(rows.size());
    b.subjects.reserve(rows.size());
    b.targets_raw.resize(static_cast<Eigen::Index>(rows.size()), data.targets->cols());
    b.targets_mse.resize(static_cast<Eigen::Index>(rows.size()), data.targets->cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<std::size_t>(rows[i]);
        b.epochs.push_back((*data.epochs)[r]);
        b.subjects.push_back((*data.subject_ids)[r]);
        b.targets_raw.row(static_cast<Eigen::Index>(i)) = data.targets->row(rows[i]);
        b.targets_mse.row(static_cast<Eigen::Index>(i)) =
            ((data.targets->row(rows[i]).transpose().array() - stats.mean.array()) /
             stats.stddev.array())
                .transpose();
    }
    return b;
}

}  // namespace internal

SearchSpace SearchSpace::meeg_default() { return SearchSpace{}; }

SearchSpace SearchSpace::fmri_default() {
    SearchSpace s;
    s.meeg = false;
    s.blocks_max = 3;
    s.hidden_hi = 2048.0;
    return s;
}

HyperDraw sample_draw(const SearchSpace& space, Rng& rng) {
    HyperDraw d;
    d.batch_size = space.batch_sizes[static_cast<std::size_t>(rng.below(space.batch_sizes.size()))];
    d.lr = space.learning_rates[static_cast<std::size_t>(rng.below(space.learning_rates.size()))];
    d.n_blocks = space.blocks_min +
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(space.blocks_max -
                                                                       space.blocks_min + 1)));
    const double log_hidden =
        rng.uniform(std::log(space.hidden_lo), std::log(space.hidden_hi));
    d.hidden = static_cast<int>(std::lround(std::exp(log_hidden)));
    if (space.meeg) {
        const double log_backbone =
            rng.uniform(std::log(space.backbone_lo), std::log(space.backbone_hi));
        d.backbone_out = static_cast<int>(std::lround(std::exp(log_backbone)));
    } else {
        d.clip_head = rng.below(2) == 1;
    }
    return d;
}

SearchResult hyperparameter_search(const SearchSpace& space,
                                   const std::function<double(const HyperDraw&)>& objective,
                                   int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("hyperparameter_search: n_samples must be >= 1");
    Rng rng(seed, /*stream=*/0x5ea);
    SearchResult result;
    for (int i = 0; i < n_samples; ++i) {
        const HyperDraw draw = sample_draw(space, rng);
        const double score = objective(draw);
        result.evaluated.emplace_back(draw, score);
        if (score > result.best_score) {
            result.best_score = score;
            result.best = draw;
        }
    }
    return result;
}

std::pair<std::vector<TrialId>, std::vector<TrialId>> inner_category_split(
    const std::vector<TrialRecord>& trials, const std::vector<TrialId>& pool, double fraction,
    std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("inner_category_split: fraction must lie in (0,1)");
    }
    std::set<int> categories;
    for (TrialId id : pool) categories.insert(trials[static_cast<std::size_t>(id)].category_id);
    if (categories.size() < 2) {
        throw std::invalid_argument("inner_category_split: need >= 2 categories");
    }
    std::vector<int> ordered(categories.begin(), categories.end());
    Rng rng(seed, /*stream=*/0x5eb);
    rng.shuffle(ordered);
    auto n_test = static_cast<std::size_t>(fraction * static_cast<double>(ordered.size()));
    n_test = std::max<std::size_t>(1, std::min(n_test, ordered.size() - 1));
    const std::set<int> test_cats(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::pair<std::vector<TrialId>, std::vector<TrialId>> out;
    for (TrialId id : pool) {
        if (test_cats.count(trials[static_cast<std::size_t>(id)].category_id) > 0) {
            out.second.push_back(id);
        } else {
            out.first.push_back(id);
        }
    }
    return out;
}

}  // namespace neurodec::train
