#pragma once

#include "neurodec/common.hpp"
#include "neurodec/dataset.hpp"
#include "neurodec/loss.hpp"
#include "neurodec/metrics.hpp"
#include "neurodec/model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace neurodec::train {

struct TrainConfig {
    double lr = 3e-4;
    int batch_size = 32;
    int max_epochs = 50;
    int patience = 10;
    double valid_fraction = 0.2;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossConfig loss;
    enum class Monitor { CombinedLoss, PearsonR } monitor = Monitor::CombinedLoss;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Bias-corrected Adam over the trainable segments of a parameter store.
class AdamOptimizer {
public:
    AdamOptimizer(const nn::ModelParams& params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double epsilon = 1e-8);

    void step(nn::ModelParams& params, const nn::ModelParams& grads);
    std::int64_t steps_taken() const { return t_; }

private:
    nn::ModelParams m_;
    nn::ModelParams v_;
    double lr_, beta1_, beta2_, epsilon_;
    std::int64_t t_ = 0;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double valid_r = 0.0;
};

struct TrainResult {
    nn::ModelParams best_params;
    std::vector<EpochStats> history;
    int best_epoch = 0;
};

struct TrainData {
    const std::vector<Matrix>* epochs = nullptr;
    const std::vector<int>* subject_ids = nullptr;
    const Matrix* targets = nullptr;  // raw embeddings, one row per trial
    std::vector<std::int64_t> train_rows;
    std::vector<std::int64_t> valid_rows;
};

void write_history_csv(const std::filesystem::path& file, const std::vector<EpochStats>& history);

namespace internal {

struct Batch {
    std::vector<Matrix> epochs;
    std::vector<int> subjects;
    Matrix targets_raw;   // for the contrastive term and Pearson R
    Matrix targets_mse;   // z-scored by train-set stats
};

Batch gather(const TrainData& data, const std::vector<std::int64_t>& rows,
             const metrics::FeatureStats& stats);

metrics::FeatureStats train_target_stats(const TrainData& data);

}  // namespace internal

/// Contrastive + reconstruction training with early stopping. Deterministic
/// given the config seed: initialization, per-epoch shuffles, and dropout
/// masks all derive from it. Returns the parameters of the best validation
/// epoch.
template <typename Module>
TrainResult train(const Module& module, nn::ModelParams params, const TrainData& data,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (data.train_rows.empty() || data.valid_rows.empty()) {
        throw std::invalid_argument("train: train and valid splits must be nonempty");
    }
    const metrics::FeatureStats stats = internal::train_target_stats(data);
    const double lambda = cfg.loss.lambda;
    const double tau = cfg.loss.tau;

    AdamOptimizer opt(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);
    TrainResult result;
    double best_metric = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::int64_t> order = data.train_rows;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, Rng::mix(0xe90c, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double train_loss_sum = 0.0;
        std::int64_t train_count = 0;
        int batch_index = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::int64_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                                 order.begin() + static_cast<std::ptrdiff_t>(hi));
            internal::Batch batch = internal::gather(data, rows, stats);
            const std::uint64_t drop_seed =
                Rng::mix(cfg.seed, Rng::mix(static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(batch_index)));
            auto cache = typename Module::CachePtr{};
            const nn::HeadOutputs out = module.forward(params, batch.epochs, batch.subjects,
                                                       nn::Mode::Train, drop_seed, &cache);
            const double l_clip = batch.epochs.size() > 1 ? clip_loss(out.clip, batch.targets_raw, tau)
                                                          : 0.0;
            const double l_mse = mse_loss(out.mse, batch.targets_mse);
            const double l = combined_loss(l_clip, l_mse, lambda);
            if (!std::isfinite(l)) {
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch_index) + ", lr " +
                                         std::to_string(cfg.lr));
            }
            Matrix d_clip = batch.epochs.size() > 1
                                ? (lambda * clip_loss_grad(out.clip, batch.targets_raw, tau)).eval()
                                : Matrix::Zero(out.clip.rows(), out.clip.cols()).eval();
            Matrix d_mse = (1.0 - lambda) * mse_loss_grad(out.mse, batch.targets_mse);
            const nn::ModelParams grads = module.backward(params, *cache, d_mse, d_clip);
            opt.step(params, grads);
            train_loss_sum += l * static_cast<double>(rows.size());
            train_count += static_cast<std::int64_t>(rows.size());
            ++batch_index;
        }

        // validation in eval mode, fixed batch partition
        double valid_loss_sum = 0.0;
        std::int64_t valid_count = 0;
        Matrix valid_pred(static_cast<Eigen::Index>(data.valid_rows.size()),
                          data.targets->cols());
        Matrix valid_true(static_cast<Eigen::Index>(data.valid_rows.size()),
                          data.targets->cols());
        Eigen::Index vrow = 0;
        for (std::size_t lo = 0; lo < data.valid_rows.size();
             lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi =
                std::min(data.valid_rows.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::int64_t> rows(
                data.valid_rows.begin() + static_cast<std::ptrdiff_t>(lo),
                data.valid_rows.begin() + static_cast<std::ptrdiff_t>(hi));
            internal::Batch batch = internal::gather(data, rows, stats);
            const nn::HeadOutputs out =
                module.forward(params, batch.epochs, batch.subjects, nn::Mode::Eval, 0, nullptr);
            const double l_clip = batch.epochs.size() > 1 ? clip_loss(out.clip, batch.targets_raw, tau)
                                                          : 0.0;
            const double l_mse = mse_loss(out.mse, batch.targets_mse);
            valid_loss_sum += combined_loss(l_clip, l_mse, lambda) * static_cast<double>(rows.size());
            valid_count += static_cast<std::int64_t>(rows.size());
            valid_pred.middleRows(vrow, out.mse.rows()) = out.mse;
            valid_true.middleRows(vrow, out.mse.rows()) = batch.targets_raw;
            vrow += out.mse.rows();
        }

        EpochStats stats_row;
        stats_row.epoch = epoch;
        stats_row.train_loss = train_loss_sum / static_cast<double>(train_count);
        stats_row.valid_loss = valid_loss_sum / static_cast<double>(valid_count);
        stats_row.valid_r = valid_pred.rows() >= 3
                                ? metrics::pearson_featurewise(valid_pred, valid_true)
                                : 0.0;
        result.history.push_back(stats_row);

        const double metric = cfg.monitor == TrainConfig::Monitor::CombinedLoss
                                  ? stats_row.valid_loss
                                  : -stats_row.valid_r;
        if (metric < best_metric) {
            best_metric = metric;
            result.best_params = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= cfg.patience) break;
        }
    }
    if (result.best_epoch == 0) {
        result.best_params = params;
        result.best_epoch = static_cast<int>(result.history.size());
    }
    return result;
}

/// One sampled hyperparameter configuration.
struct HyperDraw {
    int batch_size = 32;
    double lr = 3e-4;
    int n_blocks = 0;
    int hidden = 64;
    int backbone_out = 128;  // M/EEG only
    bool clip_head = true;   // fMRI only
};

struct SearchSpace {
    bool meeg = true;  // false: fMRI ranges
    std::vector<int> batch_sizes = {32, 64, 128, 256, 512};
    std::vector<double> learning_rates = {3e-5, 3e-4, 3e-3};
    int blocks_min = 0;
    int blocks_max = 5;       // fMRI: 3
    double hidden_lo = 32.0;  // log-uniform bounds
    double hidden_hi = 512.0;
    double backbone_lo = 64.0;
    double backbone_hi = 2048.0;
    int n_samples = 75;

    static SearchSpace meeg_default();
    static SearchSpace fmri_default();
};

HyperDraw sample_draw(const SearchSpace& space, Rng& rng);

struct SearchResult {
    HyperDraw best;
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<std::pair<HyperDraw, double>> evaluated;
};

/// Random search: n seeded draws, returns the argmax of the objective
/// (inner-test Pearson R by convention).
SearchResult hyperparameter_search(const SearchSpace& space,
                                   const std::function<double(const HyperDraw&)>& objective,
                                   int n_samples, std::uint64_t seed);

/// Carves a fraction of the distinct categories out of a trial pool as an
/// inner test set for hyperparameter selection.
std::pair<std::vector<TrialId>, std::vector<TrialId>> inner_category_split(
    const std::vector<TrialRecord>& trials, const std::vector<TrialId>& pool, double fraction,
    std::uint64_t seed);

}  // namespace neurodec::train
