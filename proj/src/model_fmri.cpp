#include "neurodec/model.hpp"

#include "nn_detail.hpp"

#include <json.hpp>

#include <cmath>

namespace neurodec::nn {

using nlohmann::json;
using namespace detail;

void FmriModuleConfig::validate() const {
    if (in_vertices < 1 || n_trs < 1 || hidden < 1 || n_blocks < 0 || embed_dim < 1 ||
        n_subjects < 1) {
        throw std::invalid_argument("FmriModuleConfig: all sizes must be positive");
    }
}

std::string FmriModuleConfig::to_json() const {
    json j;
    j["in_vertices"] = in_vertices;
    j["n_trs"] = n_trs;
    j["hidden"] = hidden;
    j["n_blocks"] = n_blocks;
    j["clip_head"] = clip_head;
    j["embed_dim"] = embed_dim;
    j["n_subjects"] = n_subjects;
    return j.dump(2);
}

FmriModuleConfig FmriModuleConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    FmriModuleConfig c;
    c.in_vertices = j.at("in_vertices").get<int>();
    c.n_trs = j.value("n_trs", 5);
    c.hidden = j.at("hidden").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.clip_head = j.value("clip_head", true);
    c.embed_dim = j.value("embed_dim", 1536);
    c.n_subjects = j.value("n_subjects", 1);
    c.validate();
    return c;
}

struct FmriBlockCache {
    std::vector<Matrix> in;
    LnCache ln;
    std::vector<Matrix> ln_out;
    std::vector<Matrix> z;  // pre-GELU
    DropoutCache drop;
};

struct FmriCache {
    std::vector<Matrix> input;
    std::vector<int> subjects;
    std::vector<Matrix> h0;  // post subject projection, H x n_trs
    std::vector<Matrix> u;   // post TR linears, pre layer norm
    LnCache tr_ln;
    std::vector<Matrix> tr_ln_out;  // pre-GELU
    DropoutCache tr_drop;
    std::vector<FmriBlockCache> blocks;
    std::vector<Matrix> backbone;  // block-stack output
    Matrix pooled;                 // batch x H
    Matrix proj;                   // batch x F
    std::vector<Matrix> clip_pre;  // F x 1 per sample, pre layer norm
    LnCache clip_ln;
    std::vector<Matrix> clip_ln_out;  // pre-GELU
};

void FmriCacheDeleter::operator()(FmriCache* p) const { delete p; }

FmriModule::FmriModule(FmriModuleConfig config) : config_(config) { config_.validate(); }

FmriModule::~FmriModule() = default;

void FmriModule::build_segments(ModelParams& p, bool allocate) const {
    const int v = config_.in_vertices;
    const int n_trs = config_.n_trs;
    const int h = config_.hidden;
    const int f = config_.embed_dim;
    p.add("subject.weight", {config_.n_subjects, h, v}, true, allocate);
    p.add("tr_linear.weight", {n_trs, h, h}, true, allocate);
    p.add("tr_linear.bias", {h, n_trs}, true, allocate);
    p.add("tr_norm.gamma", {h}, true, allocate);
    p.add("tr_norm.beta", {h}, true, allocate);
    for (int k = 1; k <= config_.n_blocks; ++k) {
        const std::string prefix = "block" + std::to_string(k) + ".";
        p.add(prefix + "norm.gamma", {h}, true, allocate);
        p.add(prefix + "norm.beta", {h}, true, allocate);
        p.add(prefix + "linear.weight", {h, h}, true, allocate);
        p.add(prefix + "linear.bias", {h}, true, allocate);
    }
    p.add("temporal.weight", {n_trs}, true, allocate);
    p.add("temporal.bias", {1}, true, allocate);
    p.add("proj.weight", {f, h}, true, allocate);
    p.add("proj.bias", {f}, true, allocate);
    p.add("head_mse.weight", {f, f}, true, allocate);
    p.add("head_mse.bias", {f}, true, allocate);
    if (config_.clip_head) {
        p.add("head_clip.weight", {f, f}, true, allocate);
        p.add("head_clip.bias", {f}, true, allocate);
        p.add("head_clip.norm.gamma", {f}, true, allocate);
        p.add("head_clip.norm.beta", {f}, true, allocate);
    }
}

ModelParams FmriModule::param_layout() const {
    ModelParams p;
    build_segments(p, false);
    return p;
}

ModelParams FmriModule::init_params(std::uint64_t seed) const {
    const int h = config_.hidden;
    const int v = config_.in_vertices;
    const int n_trs = config_.n_trs;
    const int f = config_.embed_dim;
    (void)f;
    (void)n_trs;
    (void)v;

    ModelParams p;
    build_segments(p, true);

    Rng rng(seed, /*stream=*/0x714);
    auto fill_uniform = [&](const std::string& name, Eigen::Index fan_in) {
        const double bound = init_bound(fan_in);
        Vector& values = p.vec(name);
        for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = rng.uniform(-bound, bound);
    };
    fill_uniform("subject.weight", v);
    fill_uniform("tr_linear.weight", h);
    p.vec("tr_norm.gamma").setOnes();
    for (int k = 1; k <= config_.n_blocks; ++k) {
        const std::string prefix = "block" + std::to_string(k) + ".";
        p.vec(prefix + "norm.gamma").setOnes();
        fill_uniform(prefix + "linear.weight", h);
    }
    p.vec("temporal.weight").setConstant(1.0 / static_cast<double>(n_trs));
    fill_uniform("proj.weight", h);
    fill_uniform("head_mse.weight", f);
    if (config_.clip_head) {
        fill_uniform("head_clip.weight", f);
        p.vec("head_clip.norm.gamma").setOnes();
    }
    return p;
}

HeadOutputs FmriModule::forward(ModelParams& params, const std::vector<Matrix>& batch,
                                const std::vector<int>& subject_ids, Mode mode,
                                std::uint64_t dropout_seed, FmriCachePtr* cache) const {
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    if (batch.size() != subject_ids.size()) {
        throw std::invalid_argument("forward: one subject id per sample required");
    }
    const int v = config_.in_vertices;
    const int n_trs = config_.n_trs;
    const int h = config_.hidden;
    const int f = config_.embed_dim;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].rows() != v) {
            throw std::invalid_argument("forward: vertex axis is " + std::to_string(batch[b].rows()) +
                                        ", config expects " + std::to_string(v));
        }
        if (batch[b].cols() != n_trs) {
            throw std::invalid_argument("forward: TR axis is " + std::to_string(batch[b].cols()) +
                                        ", config expects " + std::to_string(n_trs));
        }
        if (subject_ids[b] < 0 || subject_ids[b] >= config_.n_subjects) {
            throw std::invalid_argument("forward: subject id " + std::to_string(subject_ids[b]) +
                                        " out of range [0, " + std::to_string(config_.n_subjects) +
                                        ")");
        }
    }

    FmriCache local;
    FmriCache* cp = &local;
    if (cache != nullptr) {
        cache->reset(new FmriCache());
        cp = cache->get();
    }
    FmriCache& c = *cp;
    c.input = batch;
    c.subjects = subject_ids;

    Rng drop_rng(dropout_seed, /*stream=*/0xd0);
    const std::size_t n = batch.size();

    c.h0.resize(n);
    c.u.resize(n);
    const auto b_tr = params.mat("tr_linear.bias", h, n_trs);
    for (std::size_t b = 0; b < n; ++b) {
        c.h0[b].noalias() = params.mat("subject.weight", h, v, subject_ids[b]) * batch[b];
        c.u[b].resize(h, n_trs);
        for (int t = 0; t < n_trs; ++t) {
            c.u[b].col(t).noalias() = params.mat("tr_linear.weight", h, h, t) * c.h0[b].col(t);
            c.u[b].col(t) += b_tr.col(t);
        }
    }
    c.tr_ln_out = ln_forward(c.u, params.vec("tr_norm.gamma"), params.vec("tr_norm.beta"), &c.tr_ln);
    std::vector<Matrix> act(n);
    for (std::size_t b = 0; b < n; ++b) act[b] = gelu_mat(c.tr_ln_out[b]);
    std::vector<Matrix> x = dropout_forward(act, kDropoutP, mode, drop_rng, &c.tr_drop);

    c.blocks.resize(static_cast<std::size_t>(config_.n_blocks));
    for (int k = 1; k <= config_.n_blocks; ++k) {
        auto& bc = c.blocks[static_cast<std::size_t>(k - 1)];
        const std::string prefix = "block" + std::to_string(k) + ".";
        bc.in = x;
        bc.ln_out = ln_forward(bc.in, params.vec(prefix + "norm.gamma"),
                               params.vec(prefix + "norm.beta"), &bc.ln);
        bc.z.resize(n);
        const auto w_k = params.mat(prefix + "linear.weight", h, h);
        const Vector& b_k = params.vec(prefix + "linear.bias");
        std::vector<Matrix> a(n);
        for (std::size_t b = 0; b < n; ++b) {
            bc.z[b].noalias() = w_k * bc.ln_out[b];
            bc.z[b].colwise() += b_k;
            a[b] = gelu_mat(bc.z[b]);
        }
        const std::vector<Matrix> dropped = dropout_forward(a, kDropoutP, mode, drop_rng, &bc.drop);
        for (std::size_t b = 0; b < n; ++b) x[b] = bc.in[b] + dropped[b];
    }
    c.backbone = x;

    const Vector& w_t = params.vec("temporal.weight");
    const double bias_t = params.vec("temporal.bias")(0);
    c.pooled.resize(static_cast<Eigen::Index>(n), h);
    for (std::size_t b = 0; b < n; ++b) {
        c.pooled.row(static_cast<Eigen::Index>(b)) = (x[b] * w_t).transpose().array() + bias_t;
    }

    c.proj = c.pooled * params.mat("proj.weight", f, h).transpose();
    c.proj.rowwise() += params.vec("proj.bias").transpose();

    HeadOutputs out;
    out.mse = c.proj * params.mat("head_mse.weight", f, f).transpose();
    out.mse.rowwise() += params.vec("head_mse.bias").transpose();

    if (config_.clip_head) {
        Matrix clip_pre = c.proj * params.mat("head_clip.weight", f, f).transpose();
        clip_pre.rowwise() += params.vec("head_clip.bias").transpose();
        c.clip_pre.resize(n);
        for (std::size_t b = 0; b < n; ++b) {
            c.clip_pre[b] = clip_pre.row(static_cast<Eigen::Index>(b)).transpose();
        }
        c.clip_ln_out = ln_forward(c.clip_pre, params.vec("head_clip.norm.gamma"),
                                   params.vec("head_clip.norm.beta"), &c.clip_ln);
        out.clip.resize(static_cast<Eigen::Index>(n), f);
        for (std::size_t b = 0; b < n; ++b) {
            out.clip.row(static_cast<Eigen::Index>(b)) = gelu_mat(c.clip_ln_out[b]).transpose();
        }
    } else {
        out.clip = out.mse;  // both loss terms consume the MSE head
    }
    return out;
}

ModelParams FmriModule::backward(const ModelParams& params, const FmriCache& cache,
                                 const Matrix& d_mse, const Matrix& d_clip) const {
    const int n_trs = config_.n_trs;
    const int h = config_.hidden;
    const int f = config_.embed_dim;
    const int v = config_.in_vertices;
    const std::size_t n = cache.input.size();
    if (d_mse.rows() != static_cast<Eigen::Index>(n) ||
        d_clip.rows() != static_cast<Eigen::Index>(n)) {
        throw std::invalid_argument("backward: cotangent batch size mismatch");
    }
    ModelParams grads = params.zeros_like();

    Matrix d_proj = Matrix::Zero(static_cast<Eigen::Index>(n), f);

    Matrix d_mse_total = d_mse;
    if (config_.clip_head) {
        // clip = gelu(layer_norm(W_c proj + b_c))
        std::vector<Matrix> d_ln_out(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_ln_out[b] = (d_clip.row(static_cast<Eigen::Index>(b)).transpose().array() *
                           gelu_grad_mat(cache.clip_ln_out[b]).array())
                              .matrix();
        }
        std::vector<Matrix> d_clip_pre =
            ln_backward(cache.clip_ln, params.vec("head_clip.norm.gamma"), d_ln_out,
                        grads.vec("head_clip.norm.gamma"), grads.vec("head_clip.norm.beta"));
        auto d_wc = grads.mat("head_clip.weight", f, f);
        Vector& d_bc = grads.vec("head_clip.bias");
        const auto w_c = params.mat("head_clip.weight", f, f);
        for (std::size_t b = 0; b < n; ++b) {
            const Vector proj_b = cache.proj.row(static_cast<Eigen::Index>(b)).transpose();
            d_wc.noalias() += d_clip_pre[b] * proj_b.transpose();
            d_bc += d_clip_pre[b];
            d_proj.row(static_cast<Eigen::Index>(b)) += (w_c.transpose() * d_clip_pre[b]).transpose();
        }
    } else {
        d_mse_total += d_clip;  // clip output aliased the MSE head
    }

    grads.mat("head_mse.weight", f, f).noalias() = d_mse_total.transpose() * cache.proj;
    grads.vec("head_mse.bias") = d_mse_total.colwise().sum().transpose();
    d_proj += d_mse_total * params.mat("head_mse.weight", f, f);

    grads.mat("proj.weight", f, h).noalias() = d_proj.transpose() * cache.pooled;
    grads.vec("proj.bias") = d_proj.colwise().sum().transpose();
    const Matrix d_pooled = d_proj * params.mat("proj.weight", f, h);

    // temporal aggregation
    const Vector& w_t = params.vec("temporal.weight");
    Vector d_wt = Vector::Zero(n_trs);
    double d_bt = 0.0;
    std::vector<Matrix> d_x(n);
    for (std::size_t b = 0; b < n; ++b) {
        const Vector row = d_pooled.row(static_cast<Eigen::Index>(b)).transpose();
        d_x[b].noalias() = row * w_t.transpose();
        d_wt.noalias() += cache.backbone[b].transpose() * row;
        d_bt += row.sum();
    }
    grads.vec("temporal.weight") = d_wt;
    grads.vec("temporal.bias")(0) = d_bt;

    // residual blocks, reversed
    for (int k = config_.n_blocks; k >= 1; --k) {
        const auto& bc = cache.blocks[static_cast<std::size_t>(k - 1)];
        const std::string prefix = "block" + std::to_string(k) + ".";
        const std::vector<Matrix> d_drop = dropout_backward(bc.drop, d_x);
        std::vector<Matrix> d_z(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_z[b] = (d_drop[b].array() * gelu_grad_mat(bc.z[b]).array()).matrix();
        }
        auto d_wk = grads.mat(prefix + "linear.weight", h, h);
        Vector& d_bk = grads.vec(prefix + "linear.bias");
        const auto w_k = params.mat(prefix + "linear.weight", h, h);
        std::vector<Matrix> d_ln_out(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_wk.noalias() += d_z[b] * bc.ln_out[b].transpose();
            d_bk += d_z[b].rowwise().sum();
            d_ln_out[b].noalias() = w_k.transpose() * d_z[b];
        }
        const std::vector<Matrix> d_ln_in =
            ln_backward(bc.ln, params.vec(prefix + "norm.gamma"), d_ln_out,
                        grads.vec(prefix + "norm.gamma"), grads.vec(prefix + "norm.beta"));
        for (std::size_t b = 0; b < n; ++b) d_x[b] += d_ln_in[b];  // residual skip
    }

    // TR layer: dropout -> GELU -> layer norm -> per-TR linears
    const std::vector<Matrix> d_act = dropout_backward(cache.tr_drop, d_x);
    std::vector<Matrix> d_ln_out(n);
    for (std::size_t b = 0; b < n; ++b) {
        d_ln_out[b] = (d_act[b].array() * gelu_grad_mat(cache.tr_ln_out[b]).array()).matrix();
    }
    const std::vector<Matrix> d_u = ln_backward(cache.tr_ln, params.vec("tr_norm.gamma"), d_ln_out,
                                                grads.vec("tr_norm.gamma"),
                                                grads.vec("tr_norm.beta"));
    auto d_btr = grads.mat("tr_linear.bias", h, n_trs);
    std::vector<Matrix> d_h0(n, Matrix::Zero(h, n_trs));
    for (std::size_t b = 0; b < n; ++b) {
        for (int t = 0; t < n_trs; ++t) {
            grads.mat("tr_linear.weight", h, h, t).noalias() +=
                d_u[b].col(t) * cache.h0[b].col(t).transpose();
            d_btr.col(t) += d_u[b].col(t);
            d_h0[b].col(t).noalias() =
                params.mat("tr_linear.weight", h, h, t).transpose() * d_u[b].col(t);
        }
    }

    // subject projection
    for (std::size_t b = 0; b < n; ++b) {
        grads.mat("subject.weight", h, v, cache.subjects[b]).noalias() +=
            d_h0[b] * cache.input[b].transpose();
    }
    return grads;
}

std::vector<LayerCount> FmriModule::layer_counts(const ModelParams& params) const {
    auto count_prefix = [&](const std::string& prefix) {
        std::int64_t total = 0;
        for (const auto& s : params.segments) {
            if (s.trainable && s.name.rfind(prefix, 0) == 0) total += s.numel();
        }
        return total;
    };
    std::int64_t blocks = 0;
    for (const auto& s : params.segments) {
        if (s.trainable && s.name.rfind("block", 0) == 0) blocks += s.numel();
    }
    std::int64_t tr_layer = count_prefix("tr_linear") + count_prefix("tr_norm");
    return {
        {"Subject layer", count_prefix("subject")},
        {"TR layer", tr_layer},
        {"Residual conv blocks", blocks},
        {"Temporal aggregation", count_prefix("temporal")},
        {"Linear projection", count_prefix("proj")},
        {"MSE projection head", count_prefix("head_mse")},
        {"CLIP projection head", count_prefix("head_clip")},
    };
}

FmriModuleConfig reference_fmri_config(ModelSize size) {
    FmriModuleConfig c;
    c.in_vertices = 20484;
    c.n_trs = 5;
    if (size == ModelSize::Medium) {
        c.hidden = 553;
        c.n_blocks = 2;
        c.clip_head = false;
        c.n_subjects = 3;
    } else {
        c.hidden = 1552;
        c.n_blocks = 0;
        c.clip_head = true;
        c.n_subjects = 4;
    }
    return c;
}

}  // namespace neurodec::nn
