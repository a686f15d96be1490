#include <doctest.h>

#include "neurodec/loss.hpp"
#include "neurodec/model.hpp"
#include "neurodec/synth.hpp"
#include "neurodec/train.hpp"

#include <cmath>

using namespace neurodec;
using namespace neurodec::train;

TEST_CASE("clip loss closed forms") {
    // single candidate: softmax over one element, loss exactly zero
    Matrix one(1, 3);
    one << 0.3, -0.2, 0.9;
    CHECK(clip_loss(one, one, 1.0) == 0.0);

    // two orthonormal targets, predictions matched
    Matrix target(2, 2);
    target << 1, 0,
              0, 1;
    CHECK(clip_loss(target, target, 1.0) ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-9));

    // swapped rows: prediction aligned with the wrong candidate
    Matrix swapped(2, 2);
    swapped << 0, 1,
               1, 0;
    CHECK(clip_loss(swapped, target, 1.0) ==
          doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-9));
}

TEST_CASE("clip loss is invariant to positive row rescaling") {
    Rng rng(3);
    Matrix pred(4, 6), target(4, 6);
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) {
            pred(i, j) = rng.normal();
            target(i, j) = rng.normal();
        }
    }
    const double base = clip_loss(pred, target, 1.0);
    Matrix scaled = pred;
    scaled.row(2) *= 37.5;
    CHECK(std::fabs(clip_loss(scaled, target, 1.0) - base) < 1e-9);
}

TEST_CASE("clip loss rejects zero-norm rows") {
    Matrix pred = Matrix::Zero(2, 3);
    Matrix target = Matrix::Ones(2, 3);
    CHECK_THROWS_AS(clip_loss(pred, target, 1.0), std::invalid_argument);
}

TEST_CASE("mse loss arithmetic and oracle") {
    Matrix a(1, 1), b(1, 1);
    a << 2.0;
    b << 0.0;
    CHECK(mse_loss(a, b) == doctest::Approx(4.0));
    CHECK(mse_loss(b, b) == 0.0);

    Rng rng(5);
    Matrix p(3, 4), t(3, 4);
    double direct = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            p(i, j) = rng.normal();
            t(i, j) = rng.normal();
            direct += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
        }
    }
    CHECK(std::fabs(mse_loss(p, t) - direct / 12.0) < 1e-12);
}

TEST_CASE("combined loss is the exact affine combination") {
    CHECK(combined_loss(2.0, 4.0, 0.0) == 4.0);
    CHECK(combined_loss(2.0, 4.0, 1.0) == 2.0);
    CHECK(combined_loss(2.0, 4.0, 0.25) == 3.5);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(7);
    Matrix pred(3, 5), target(3, 5);
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            pred(i, j) = rng.normal();
            target(i, j) = rng.normal();
        }
    }
    const double lambda = 0.25;
    const Matrix g = lambda * clip_loss_grad(pred, target, 1.0) +
                     (1.0 - lambda) * mse_loss_grad(pred, target);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            Matrix plus = pred, minus = pred;
            plus(i, j) += h;
            minus(i, j) -= h;
            const double fd = (combined_loss(clip_loss(plus, target, 1.0),
                                             mse_loss(plus, target), lambda) -
                               combined_loss(clip_loss(minus, target, 1.0),
                                             mse_loss(minus, target), lambda)) /
                              (2.0 * h);
            const double denom = std::max({std::fabs(fd), std::fabs(g(i, j)), 1e-8});
            CHECK(std::fabs(fd - g(i, j)) / denom < 1e-4);
        }
    }
}

TEST_CASE("adam matches a hand-computed trajectory on a 2-parameter quadratic") {
    // f(w) = w0^2 + 4 w1^2, start (1, -1), lr 0.1, default betas
    nn::ModelParams params;
    params.add("w", {2});
    params.vec("w") << 1.0, -1.0;
    AdamOptimizer opt(params, 0.1);

    // independent scalar recurrence
    double w[2] = {1.0, -1.0};
    double m[2] = {0.0, 0.0};
    double v[2] = {0.0, 0.0};
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
    for (int t = 1; t <= 3; ++t) {
        nn::ModelParams grads = params.zeros_like();
        grads.vec("w")(0) = 2.0 * params.vec("w")(0);
        grads.vec("w")(1) = 8.0 * params.vec("w")(1);
        opt.step(params, grads);

        const double g[2] = {2.0 * w[0], 8.0 * w[1]};
        for (int i = 0; i < 2; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t));
            const double vh = v[i] / (1 - std::pow(b2, t));
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
        CHECK(std::fabs(params.vec("w")(0) - w[0]) < 1e-12);
        CHECK(std::fabs(params.vec("w")(1) - w[1]) < 1e-12);
    }
}

TEST_CASE("adam skips non-trainable segments") {
    nn::ModelParams params;
    params.add("w", {2});
    params.add("buffer", {2}, false);
    params.vec("buffer") << 5.0, 6.0;
    AdamOptimizer opt(params, 0.1);
    nn::ModelParams grads = params.zeros_like();
    grads.vec("w") << 1.0, 1.0;
    grads.vec("buffer") << 9.0, 9.0;
    opt.step(params, grads);
    CHECK(params.vec("buffer")(0) == 5.0);
    CHECK(params.vec("w")(0) != 0.0);
}

namespace {

struct TrainFixture {
    synth::SynthDataset data;
    std::vector<int> subject_ids;
    TrainData td;
};

TrainFixture make_fixture(double snr, std::uint64_t seed) {
    TrainFixture fx;
    synth::SynthConfig cfg = synth::device_presets()[DeviceKind::EEG];
    cfg.n_images = 40;
    cfg.n_reps = 2;
    cfg.n_subjects = 2;
    cfg.snr = snr;
    cfg.seed = seed;
    fx.data = synth::generate(cfg);
    fx.subject_ids.reserve(fx.data.trials.size());
    for (const auto& t : fx.data.trials) fx.subject_ids.push_back(t.subject_id);
    return fx;
}

nn::MeegModuleConfig small_net(const synth::SynthDataset& data) {
    nn::MeegModuleConfig mc;
    mc.in_channels = static_cast<int>(data.epochs.front().rows());
    mc.timepoints = static_cast<int>(data.epochs.front().cols());
    // the attention output must not bottleneck below the embedding dimension
    mc.sa_out = 24;
    mc.sa_harmonics = 4;
    mc.hidden = 16;
    mc.n_blocks = 1;
    mc.backbone_out = 32;
    mc.embed_dim = static_cast<int>(data.embeddings.cols());
    mc.n_subjects = 2;
    return mc;
}

Matrix trial_targets(const synth::SynthDataset& data) {
    Matrix t(static_cast<Eigen::Index>(data.trials.size()), data.embeddings.cols());
    for (std::size_t i = 0; i < data.trials.size(); ++i) {
        t.row(static_cast<Eigen::Index>(i)) = data.embeddings.row(data.trials[i].image_id);
    }
    return t;
}

}  // namespace

TEST_CASE("training on clean data reaches high validation R and honors the contract") {
    TrainFixture fx = make_fixture(20.0, 1);
    const Matrix targets = trial_targets(fx.data);
    const nn::MeegModuleConfig mc = small_net(fx.data);
    const nn::MeegModule module(mc, fx.data.sensor_positions);

    TrainData td;
    td.epochs = &fx.data.epochs;
    td.subject_ids = &fx.subject_ids;
    td.targets = &targets;
    for (std::size_t i = 0; i < fx.data.trials.size(); ++i) {
        if (i % 5 == 0) {
            td.valid_rows.push_back(static_cast<std::int64_t>(i));
        } else {
            td.train_rows.push_back(static_cast<std::int64_t>(i));
        }
    }
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 32;
    cfg.max_epochs = 50;
    cfg.patience = 10;
    cfg.seed = 5;
    const TrainResult result = neurodec::train::train(module, module.init_params(cfg.seed), td, cfg);

    REQUIRE(!result.history.empty());
    CHECK(result.history.back().epoch == static_cast<int>(result.history.size()));
    // best epoch carries the minimum validation loss seen
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (const auto& row : result.history) {
        if (row.valid_loss < best) {
            best = row.valid_loss;
            best_epoch = row.epoch;
        }
    }
    CHECK(result.best_epoch == best_epoch);
    // stopped early iff patience ran out exactly
    if (result.history.size() < static_cast<std::size_t>(cfg.max_epochs)) {
        CHECK(static_cast<int>(result.history.size()) == result.best_epoch + cfg.patience);
    }
    CHECK(result.history[static_cast<std::size_t>(result.best_epoch - 1)].valid_r > 0.9);
    CHECK(result.best_params.all_finite());
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    TrainFixture fx = make_fixture(0.8, 2);
    const Matrix targets = trial_targets(fx.data);
    const nn::MeegModuleConfig mc = small_net(fx.data);
    const nn::MeegModule module(mc, fx.data.sensor_positions);
    TrainData td;
    td.epochs = &fx.data.epochs;
    td.subject_ids = &fx.subject_ids;
    td.targets = &targets;
    for (std::size_t i = 0; i < fx.data.trials.size(); ++i) {
        (i % 5 == 0 ? td.valid_rows : td.train_rows).push_back(static_cast<std::int64_t>(i));
    }
    TrainConfig cfg;
    cfg.lr = 3e-4;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.seed = 11;
    const TrainResult a = neurodec::train::train(module, module.init_params(cfg.seed), td, cfg);
    const TrainResult b = neurodec::train::train(module, module.init_params(cfg.seed), td, cfg);
    REQUIRE(a.best_params.segments.size() == b.best_params.segments.size());
    for (std::size_t i = 0; i < a.best_params.segments.size(); ++i) {
        CHECK((a.best_params.segments[i].values - b.best_params.segments[i].values)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("hyperparameter search: degenerate space, ranges, and argmax") {
    SearchSpace space = SearchSpace::meeg_default();
    space.batch_sizes = {64};
    space.learning_rates = {3e-4};
    space.blocks_min = space.blocks_max = 2;
    space.hidden_lo = space.hidden_hi = 128.0;
    space.backbone_lo = space.backbone_hi = 256.0;
    const SearchResult single =
        hyperparameter_search(space, [](const HyperDraw&) { return 1.0; }, 3, 1);
    CHECK(single.best.batch_size == 64);
    CHECK(single.best.n_blocks == 2);
    CHECK(single.best.hidden == 128);
    CHECK(single.best.backbone_out == 256);

    const SearchSpace full = SearchSpace::meeg_default();
    const SearchResult r = hyperparameter_search(
        full, [](const HyperDraw& d) { return -std::fabs(std::log10(d.lr) + 3.5); }, 75, 9);
    CHECK(r.evaluated.size() == 75);
    for (const auto& [draw, score] : r.evaluated) {
        CHECK(draw.hidden >= 32);
        CHECK(draw.hidden <= 512);
        CHECK(draw.backbone_out >= 64);
        CHECK(draw.backbone_out <= 2048);
        CHECK(draw.n_blocks >= 0);
        CHECK(draw.n_blocks <= 5);
    }
    // objective peaks between 3e-4 and 3e-3; the best draw must beat the median
    std::vector<double> scores;
    for (const auto& [draw, score] : r.evaluated) scores.push_back(score);
    std::sort(scores.begin(), scores.end());
    CHECK(r.best_score > scores[scores.size() / 2]);
}

TEST_CASE("fmri search space toggles the clip head and widens hidden sizes") {
    SearchSpace space = SearchSpace::fmri_default();
    Rng rng(31);
    bool saw_with = false, saw_without = false;
    for (int i = 0; i < 100; ++i) {
        const HyperDraw d = sample_draw(space, rng);
        CHECK(d.hidden >= 32);
        CHECK(d.hidden <= 2048);
        CHECK(d.n_blocks <= 3);
        saw_with |= d.clip_head;
        saw_without |= !d.clip_head;
    }
    CHECK(saw_with);
    CHECK(saw_without);
}

TEST_CASE("inner category split carves a fifth of the categories") {
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 100; ++i) {
        TrialRecord t;
        t.image_id = i;
        t.category_id = i / 4;  // 25 categories
        trials.push_back(t);
    }
    std::vector<TrialId> pool(trials.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<TrialId>(i);
    const auto [inner_train, inner_test] = inner_category_split(trials, pool, 0.2, 3);
    CHECK(inner_test.size() == 20);  // 5 categories x 4 images
    CHECK(inner_train.size() == 80);
    std::set<int> train_cats, test_cats;
    for (TrialId id : inner_train) train_cats.insert(trials[id].category_id);
    for (TrialId id : inner_test) test_cats.insert(trials[id].category_id);
    for (int c : test_cats) CHECK(train_cats.count(c) == 0);
}

TEST_CASE("train config json round-trip") {
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 128;
    cfg.seed = 42;
    cfg.monitor = TrainConfig::Monitor::PearsonR;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.lr == doctest::Approx(3e-3));
    CHECK(back.batch_size == 128);
    CHECK(back.seed == 42);
    CHECK(back.monitor == TrainConfig::Monitor::PearsonR);
}
