#include "neurodec/model.hpp"

#include "nn_detail.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace neurodec::nn {

using nlohmann::json;
using namespace detail;

std::string size_name(ModelSize s) { return s == ModelSize::Medium ? "medium" : "large"; }

ModelSize parse_size(const std::string& name) {
    if (name == "medium") return ModelSize::Medium;
    if (name == "large") return ModelSize::Large;
    throw std::invalid_argument("unknown model size: " + name + " (expected medium|large)");
}

Eigen::Index Segment::numel() const {
    return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                           [](Eigen::Index a, Eigen::Index b) { return a * b; });
}

Segment& ModelParams::add(const std::string& name, std::vector<Eigen::Index> shape,
                          bool trainable, bool allocate) {
    if (index_.count(name) > 0) throw std::logic_error("duplicate segment: " + name);
    Segment seg;
    seg.name = name;
    seg.shape = std::move(shape);
    seg.trainable = trainable;
    if (allocate) seg.values = Vector::Zero(seg.numel());
    index_[name] = segments.size();
    segments.push_back(std::move(seg));
    return segments.back();
}

Segment& ModelParams::seg(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no segment named " + name);
    return segments[it->second];
}

const Segment& ModelParams::seg(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no segment named " + name);
    return segments[it->second];
}

bool ModelParams::has(const std::string& name) const { return index_.count(name) > 0; }

Eigen::Map<Matrix> ModelParams::mat(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                    Eigen::Index block) {
    Segment& s = seg(name);
    const Eigen::Index offset = block * rows * cols;
    if (offset + rows * cols > s.values.size()) {
        throw std::out_of_range("segment view out of range: " + name);
    }
    return {s.values.data() + offset, rows, cols};
}

Eigen::Map<const Matrix> ModelParams::mat(const std::string& name, Eigen::Index rows,
                                          Eigen::Index cols, Eigen::Index block) const {
    const Segment& s = seg(name);
    const Eigen::Index offset = block * rows * cols;
    if (offset + rows * cols > s.values.size()) {
        throw std::out_of_range("segment view out of range: " + name);
    }
    return {s.values.data() + offset, rows, cols};
}

Vector& ModelParams::vec(const std::string& name) { return seg(name).values; }
const Vector& ModelParams::vec(const std::string& name) const { return seg(name).values; }

std::int64_t ModelParams::trainable_count() const {
    std::int64_t total = 0;
    for (const auto& s : segments) {
        if (s.trainable) total += s.numel();
    }
    return total;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams out;
    for (const auto& s : segments) out.add(s.name, s.shape, s.trainable);
    return out;
}

bool ModelParams::all_finite() const {
    for (const auto& s : segments) {
        if (!s.values.allFinite()) return false;
    }
    return true;
}

namespace detail {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double init_bound(Eigen::Index fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

}  // namespace detail

void MeegModuleConfig::validate() const {
    if (in_channels < 1 || timepoints < 1 || sa_out < 1 || sa_harmonics < 1 || hidden < 1 ||
        n_blocks < 0 || backbone_out < 1 || embed_dim < 1 || n_subjects < 1) {
        throw std::invalid_argument("MeegModuleConfig: all sizes must be positive");
    }
}

std::string MeegModuleConfig::to_json() const {
    json j;
    j["in_channels"] = in_channels;
    j["timepoints"] = timepoints;
    j["sa_out"] = sa_out;
    j["sa_harmonics"] = sa_harmonics;
    j["hidden"] = hidden;
    j["n_blocks"] = n_blocks;
    j["backbone_out"] = backbone_out;
    j["embed_dim"] = embed_dim;
    j["n_subjects"] = n_subjects;
    return j.dump(2);
}

MeegModuleConfig MeegModuleConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    MeegModuleConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.timepoints = j.at("timepoints").get<int>();
    c.sa_out = j.value("sa_out", 270);
    c.sa_harmonics = j.value("sa_harmonics", 32);
    c.hidden = j.at("hidden").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.backbone_out = j.at("backbone_out").get<int>();
    c.embed_dim = j.value("embed_dim", 1536);
    c.n_subjects = j.value("n_subjects", 1);
    c.validate();
    return c;
}

struct MeegBlockCache {
    std::vector<Matrix> in;
    std::vector<Matrix> z1;
    BnCache bn1;
    std::vector<Matrix> a1;
    std::vector<Matrix> g1;
    std::vector<Matrix> z2;
    BnCache bn2;
    std::vector<Matrix> a2;
    std::vector<Matrix> g2;
    std::vector<Matrix> z3;
};

struct MeegCache {
    std::vector<Matrix> input;
    std::vector<int> subjects;
    Matrix attn;  // sa_out x S, post-softmax
    std::vector<Matrix> x_sa;
    std::vector<Matrix> x_lp;
    std::vector<Matrix> x_subj;
    std::vector<MeegBlockCache> blocks;
    std::vector<Matrix> backbone_in;  // block-stack output feeding the 1x1 block
    std::vector<Matrix> e_pre;        // 1x1 expand pre-activation
    std::vector<Matrix> y_out;        // backbone_out x T
    Matrix pooled;                    // batch x backbone_out
};

MeegModule::MeegModule(MeegModuleConfig config, Matrix sensor_positions)
    : config_(config), positions_(std::move(sensor_positions)) {
    config_.validate();
    if (positions_.rows() != config_.in_channels || positions_.cols() != 2) {
        throw std::invalid_argument("MeegModule: sensor positions must be in_channels x 2");
    }
    // Fourier basis over positions: cos/sin of 2*pi*(k*px + l*py) for
    // k, l < sa_harmonics. Columns ordered (k, l, {cos, sin}).
    const int h = config_.sa_harmonics;
    fourier_basis_.resize(config_.in_channels, 2 * h * h);
    for (Eigen::Index s = 0; s < positions_.rows(); ++s) {
        const double px = positions_(s, 0);
        const double py = positions_(s, 1);
        for (int k = 0; k < h; ++k) {
            for (int l = 0; l < h; ++l) {
                const double phase = 2.0 * std::numbers::pi * (k * px + l * py);
                fourier_basis_(s, 2 * (k * h + l)) = std::cos(phase);
                fourier_basis_(s, 2 * (k * h + l) + 1) = std::sin(phase);
            }
        }
    }
}

MeegModule::~MeegModule() = default;

std::pair<int, int> MeegModule::block_dilations(int k) {
    const int e1 = (2 * (k - 1)) % 5;
    const int e2 = (2 * (k - 1) + 1) % 5;
    return {1 << e1, 1 << e2};
}

void MeegModule::build_segments(ModelParams& p, bool allocate) const {
    const int t_dim = config_.timepoints;
    const int a_out = config_.sa_out;
    const int h = config_.sa_harmonics;
    const int d = config_.hidden;
    const int b_out = config_.backbone_out;
    const int f = config_.embed_dim;
    p.add("spatial_attention.weight", {a_out, 2 * h * h}, true, allocate);
    p.add("linear_proj.weight", {d, a_out}, true, allocate);
    p.add("linear_proj.bias", {d}, true, allocate);
    p.add("subject.weight", {config_.n_subjects, d, d}, true, allocate);
    for (int k = 1; k <= config_.n_blocks; ++k) {
        const std::string prefix = "block" + std::to_string(k) + ".";
        p.add(prefix + "conv1.weight", {d, d, 3}, true, allocate);
        p.add(prefix + "conv1.bias", {d}, true, allocate);
        p.add(prefix + "bn1.gamma", {d}, true, allocate);
        p.add(prefix + "bn1.beta", {d}, true, allocate);
        p.add(prefix + "bn1.running_mean", {d}, false, allocate);
        p.add(prefix + "bn1.running_var", {d}, false, allocate);
        p.add(prefix + "conv2.weight", {d, d, 3}, true, allocate);
        p.add(prefix + "conv2.bias", {d}, true, allocate);
        p.add(prefix + "bn2.gamma", {d}, true, allocate);
        p.add(prefix + "bn2.beta", {d}, true, allocate);
        p.add(prefix + "bn2.running_mean", {d}, false, allocate);
        p.add(prefix + "bn2.running_var", {d}, false, allocate);
        p.add(prefix + "conv3.weight", {2 * d, d, 3}, true, allocate);
        p.add(prefix + "conv3.bias", {2 * d}, true, allocate);
    }
    p.add("conv1x1.expand.weight", {2 * d, d}, true, allocate);
    p.add("conv1x1.expand.bias", {2 * d}, true, allocate);
    p.add("conv1x1.out.weight", {b_out, 2 * d}, true, allocate);
    p.add("conv1x1.out.bias", {b_out}, true, allocate);
    p.add("temporal.weight", {t_dim}, true, allocate);
    p.add("temporal.bias", {1}, true, allocate);
    p.add("head_mse.weight", {f, b_out}, true, allocate);
    p.add("head_mse.bias", {f}, true, allocate);
    p.add("head_clip.weight", {f, b_out}, true, allocate);
    p.add("head_clip.bias", {f}, true, allocate);
}

ModelParams MeegModule::param_layout() const {
    ModelParams p;
    build_segments(p, false);
    return p;
}

ModelParams MeegModule::init_params(std::uint64_t seed) const {
    const int t_dim = config_.timepoints;
    const int a_out = config_.sa_out;
    const int h = config_.sa_harmonics;
    const int d = config_.hidden;
    const int b_out = config_.backbone_out;

    ModelParams p;
    build_segments(p, true);

    Rng rng(seed, /*stream=*/0x713);
    auto fill_uniform = [&](const std::string& name, Eigen::Index fan_in) {
        const double bound = init_bound(fan_in);
        Vector& v = p.vec(name);
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-bound, bound);
    };
    fill_uniform("spatial_attention.weight", 2 * h * h);
    fill_uniform("linear_proj.weight", a_out);
    for (int s = 0; s < config_.n_subjects; ++s) {
        auto w = p.mat("subject.weight", d, d, s);
        w.setIdentity();
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] += 0.01 * rng.normal();  // near pass-through start
        }
    }
    for (int k = 1; k <= config_.n_blocks; ++k) {
        const std::string prefix = "block" + std::to_string(k) + ".";
        fill_uniform(prefix + "conv1.weight", 3 * d);
        fill_uniform(prefix + "conv2.weight", 3 * d);
        fill_uniform(prefix + "conv3.weight", 3 * d);
        p.vec(prefix + "bn1.gamma").setOnes();
        p.vec(prefix + "bn1.running_var").setOnes();
        p.vec(prefix + "bn2.gamma").setOnes();
        p.vec(prefix + "bn2.running_var").setOnes();
    }
    fill_uniform("conv1x1.expand.weight", d);
    fill_uniform("conv1x1.out.weight", 2 * d);
    p.vec("temporal.weight").setConstant(1.0 / static_cast<double>(t_dim));
    fill_uniform("head_mse.weight", b_out);
    fill_uniform("head_clip.weight", b_out);
    return p;
}

namespace {

/// y = bias + sum_k W_k * shift(x, (k-1)*dilation), kernel size 3.
Matrix conv1d(const ModelParams& p, const std::string& weight, const std::string& bias,
              Eigen::Index out_dim, Eigen::Index in_dim, int dilation, const Matrix& x) {
    Matrix y = Matrix::Zero(out_dim, x.cols());
    for (int tap = 0; tap < 3; ++tap) {
        y.noalias() += p.mat(weight, out_dim, in_dim, tap) * shift_cols(x, (tap - 1) * dilation);
    }
    y.colwise() += p.vec(bias);
    return y;
}

void conv1d_backward(const ModelParams& p, ModelParams& grads, const std::string& weight,
                     const std::string& bias, Eigen::Index out_dim, Eigen::Index in_dim,
                     int dilation, const Matrix& x, const Matrix& dy, Matrix& dx) {
    for (int tap = 0; tap < 3; ++tap) {
        const Eigen::Index s = (tap - 1) * dilation;
        grads.mat(weight, out_dim, in_dim, tap).noalias() += dy * shift_cols(x, s).transpose();
        dx.noalias() += p.mat(weight, out_dim, in_dim, tap).transpose() * shift_cols(dy, -s);
    }
    grads.vec(bias) += dy.rowwise().sum();
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Matrix MeegModule::attention_weights(const ModelParams& params) const {
    const int a_out = config_.sa_out;
    const int h = config_.sa_harmonics;
    const Matrix scores =
        params.mat("spatial_attention.weight", a_out, 2 * h * h) * fourier_basis_.transpose();
    Matrix attn(scores.rows(), scores.cols());
    for (Eigen::Index j = 0; j < scores.rows(); ++j) {
        const double m = scores.row(j).maxCoeff();
        const Eigen::ArrayXd e = (scores.row(j).array() - m).exp();
        attn.row(j) = (e / e.sum()).matrix();
    }
    return attn;
}

void MeegCacheDeleter::operator()(MeegCache* p) const { delete p; }

HeadOutputs MeegModule::forward(ModelParams& params, const std::vector<Matrix>& batch,
                                const std::vector<int>& subject_ids, Mode mode,
                                std::uint64_t dropout_seed, MeegCachePtr* cache) const {
    (void)dropout_seed;  // no dropout in this architecture
    if (batch.empty()) throw std::invalid_argument("forward: empty batch");
    if (batch.size() != subject_ids.size()) {
        throw std::invalid_argument("forward: one subject id per sample required");
    }
    const int d = config_.hidden;
    const int b_out = config_.backbone_out;
    const int f = config_.embed_dim;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].rows() != config_.in_channels) {
            throw std::invalid_argument("forward: channel axis is " +
                                        std::to_string(batch[b].rows()) + ", config expects " +
                                        std::to_string(config_.in_channels));
        }
        if (batch[b].cols() != config_.timepoints) {
            throw std::invalid_argument("forward: time axis is " + std::to_string(batch[b].cols()) +
                                        ", config expects " + std::to_string(config_.timepoints));
        }
        if (subject_ids[b] < 0 || subject_ids[b] >= config_.n_subjects) {
            throw std::invalid_argument("forward: subject id " + std::to_string(subject_ids[b]) +
                                        " out of range [0, " + std::to_string(config_.n_subjects) +
                                        ")");
        }
    }

    MeegCache local;
    MeegCache* cp = &local;
    if (cache != nullptr) {
        cache->reset(new MeegCache());
        cp = cache->get();
    }
    MeegCache& c = *cp;
    c.input = batch;
    c.subjects = subject_ids;
    c.attn = attention_weights(params);

    const std::size_t n = batch.size();
    c.x_sa.resize(n);
    c.x_lp.resize(n);
    c.x_subj.resize(n);
    const auto w_lp = params.mat("linear_proj.weight", d, config_.sa_out);
    const Vector& b_lp = params.vec("linear_proj.bias");
    for (std::size_t b = 0; b < n; ++b) {
        c.x_sa[b].noalias() = c.attn * batch[b];
        c.x_lp[b].noalias() = w_lp * c.x_sa[b];
        c.x_lp[b].colwise() += b_lp;
        c.x_subj[b].noalias() = params.mat("subject.weight", d, d, subject_ids[b]) * c.x_lp[b];
    }

    std::vector<Matrix> x = c.x_subj;
    c.blocks.resize(static_cast<std::size_t>(config_.n_blocks));
    for (int k = 1; k <= config_.n_blocks; ++k) {
        auto& bc = c.blocks[static_cast<std::size_t>(k - 1)];
        const std::string prefix = "block" + std::to_string(k) + ".";
        const auto [d1, d2] = block_dilations(k);
        bc.in = x;
        bc.z1.resize(n);
        for (std::size_t b = 0; b < n; ++b) {
            bc.z1[b] = conv1d(params, prefix + "conv1.weight", prefix + "conv1.bias", d, d, d1,
                              bc.in[b]);
        }
        bc.a1 = bn_forward(bc.z1, params.vec(prefix + "bn1.gamma"), params.vec(prefix + "bn1.beta"),
                           params.vec(prefix + "bn1.running_mean"),
                           params.vec(prefix + "bn1.running_var"), mode, &bc.bn1);
        bc.g1.resize(n);
        for (std::size_t b = 0; b < n; ++b) bc.g1[b] = gelu_mat(bc.a1[b]);
        bc.z2.resize(n);
        for (std::size_t b = 0; b < n; ++b) {
            bc.z2[b] = conv1d(params, prefix + "conv2.weight", prefix + "conv2.bias", d, d, d2,
                              bc.g1[b]);
        }
        bc.a2 = bn_forward(bc.z2, params.vec(prefix + "bn2.gamma"), params.vec(prefix + "bn2.beta"),
                           params.vec(prefix + "bn2.running_mean"),
                           params.vec(prefix + "bn2.running_var"), mode, &bc.bn2);
        bc.g2.resize(n);
        for (std::size_t b = 0; b < n; ++b) bc.g2[b] = gelu_mat(bc.a2[b]);
        bc.z3.resize(n);
        for (std::size_t b = 0; b < n; ++b) {
            bc.z3[b] = conv1d(params, prefix + "conv3.weight", prefix + "conv3.bias", 2 * d, d, 1,
                              bc.g2[b]);
        }
        for (std::size_t b = 0; b < n; ++b) {
            const Matrix& z3 = bc.z3[b];
            const Matrix gate = z3.bottomRows(d).unaryExpr([](double v) { return sigmoid(v); });
            x[b] = bc.in[b] + (z3.topRows(d).array() * gate.array()).matrix();
        }
    }
    c.backbone_in = x;

    c.e_pre.resize(n);
    c.y_out.resize(n);
    const auto w_e = params.mat("conv1x1.expand.weight", 2 * d, d);
    const Vector& b_e = params.vec("conv1x1.expand.bias");
    const auto w_o = params.mat("conv1x1.out.weight", b_out, 2 * d);
    const Vector& b_o = params.vec("conv1x1.out.bias");
    for (std::size_t b = 0; b < n; ++b) {
        c.e_pre[b].noalias() = w_e * c.backbone_in[b];
        c.e_pre[b].colwise() += b_e;
        c.y_out[b].noalias() = w_o * gelu_mat(c.e_pre[b]);
        c.y_out[b].colwise() += b_o;
    }

    const Vector& w_t = params.vec("temporal.weight");
    const double b_t = params.vec("temporal.bias")(0);
    c.pooled.resize(static_cast<Eigen::Index>(n), b_out);
    for (std::size_t b = 0; b < n; ++b) {
        c.pooled.row(static_cast<Eigen::Index>(b)) = (c.y_out[b] * w_t).transpose().array() + b_t;
    }

    HeadOutputs out;
    const auto w_m = params.mat("head_mse.weight", f, b_out);
    const auto w_c = params.mat("head_clip.weight", f, b_out);
    out.mse = c.pooled * w_m.transpose();
    out.mse.rowwise() += params.vec("head_mse.bias").transpose();
    out.clip = c.pooled * w_c.transpose();
    out.clip.rowwise() += params.vec("head_clip.bias").transpose();
    return out;
}

ModelParams MeegModule::backward(const ModelParams& params, const MeegCache& cache,
                                 const Matrix& d_mse, const Matrix& d_clip) const {
    const int d = config_.hidden;
    const int a_out = config_.sa_out;
    const int b_out = config_.backbone_out;
    const int f = config_.embed_dim;
    const std::size_t n = cache.input.size();
    if (d_mse.rows() != static_cast<Eigen::Index>(n) || d_clip.rows() != static_cast<Eigen::Index>(n)) {
        throw std::invalid_argument("backward: cotangent batch size mismatch");
    }
    ModelParams grads = params.zeros_like();

    // heads
    grads.mat("head_mse.weight", f, b_out).noalias() = d_mse.transpose() * cache.pooled;
    grads.vec("head_mse.bias") = d_mse.colwise().sum().transpose();
    grads.mat("head_clip.weight", f, b_out).noalias() = d_clip.transpose() * cache.pooled;
    grads.vec("head_clip.bias") = d_clip.colwise().sum().transpose();
    const Matrix d_pooled = d_mse * params.mat("head_mse.weight", f, b_out) +
                            d_clip * params.mat("head_clip.weight", f, b_out);

    // temporal aggregation
    const Vector& w_t = params.vec("temporal.weight");
    Vector d_wt = Vector::Zero(w_t.size());
    double d_bt = 0.0;
    std::vector<Matrix> d_y(n);
    for (std::size_t b = 0; b < n; ++b) {
        const Vector row = d_pooled.row(static_cast<Eigen::Index>(b)).transpose();
        d_y[b].noalias() = row * w_t.transpose();
        d_wt.noalias() += cache.y_out[b].transpose() * row;
        d_bt += row.sum();
    }
    grads.vec("temporal.weight") = d_wt;
    grads.vec("temporal.bias")(0) = d_bt;

    // 1x1 block
    auto d_we = grads.mat("conv1x1.expand.weight", 2 * d, d);
    auto d_wo = grads.mat("conv1x1.out.weight", b_out, 2 * d);
    Vector& d_be = grads.vec("conv1x1.expand.bias");
    Vector& d_bo = grads.vec("conv1x1.out.bias");
    const auto w_e = params.mat("conv1x1.expand.weight", 2 * d, d);
    const auto w_o = params.mat("conv1x1.out.weight", b_out, 2 * d);
    std::vector<Matrix> d_x(n);
    for (std::size_t b = 0; b < n; ++b) {
        const Matrix e_act = gelu_mat(cache.e_pre[b]);
        d_wo.noalias() += d_y[b] * e_act.transpose();
        d_bo += d_y[b].rowwise().sum();
        const Matrix d_eact = w_o.transpose() * d_y[b];
        const Matrix d_epre = (d_eact.array() * gelu_grad_mat(cache.e_pre[b]).array()).matrix();
        d_we.noalias() += d_epre * cache.backbone_in[b].transpose();
        d_be += d_epre.rowwise().sum();
        d_x[b].noalias() = w_e.transpose() * d_epre;
    }

    // residual blocks, reversed
    for (int k = config_.n_blocks; k >= 1; --k) {
        const auto& bc = cache.blocks[static_cast<std::size_t>(k - 1)];
        const std::string prefix = "block" + std::to_string(k) + ".";
        const auto [d1, d2] = block_dilations(k);

        std::vector<Matrix> d_z3(n);
        for (std::size_t b = 0; b < n; ++b) {
            const Matrix& z3 = bc.z3[b];
            const Matrix gate = z3.bottomRows(d).unaryExpr([](double v) { return sigmoid(v); });
            d_z3[b].resize(2 * d, z3.cols());
            d_z3[b].topRows(d) = (d_x[b].array() * gate.array()).matrix();
            d_z3[b].bottomRows(d) = (d_x[b].array() * z3.topRows(d).array() * gate.array() *
                                     (1.0 - gate.array()))
                                        .matrix();
        }
        std::vector<Matrix> d_g2(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_g2[b] = Matrix::Zero(d, bc.g2[b].cols());
            conv1d_backward(params, grads, prefix + "conv3.weight", prefix + "conv3.bias", 2 * d, d,
                            1, bc.g2[b], d_z3[b], d_g2[b]);
        }
        std::vector<Matrix> d_a2(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_a2[b] = (d_g2[b].array() * gelu_grad_mat(bc.a2[b]).array()).matrix();
        }
        std::vector<Matrix> d_z2 = bn_backward(bc.bn2, params.vec(prefix + "bn2.gamma"), d_a2,
                                               grads.vec(prefix + "bn2.gamma"),
                                               grads.vec(prefix + "bn2.beta"));
        std::vector<Matrix> d_g1(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_g1[b] = Matrix::Zero(d, bc.g1[b].cols());
            conv1d_backward(params, grads, prefix + "conv2.weight", prefix + "conv2.bias", d, d, d2,
                            bc.g1[b], d_z2[b], d_g1[b]);
        }
        std::vector<Matrix> d_a1(n);
        for (std::size_t b = 0; b < n; ++b) {
            d_a1[b] = (d_g1[b].array() * gelu_grad_mat(bc.a1[b]).array()).matrix();
        }
        std::vector<Matrix> d_z1 = bn_backward(bc.bn1, params.vec(prefix + "bn1.gamma"), d_a1,
                                               grads.vec(prefix + "bn1.gamma"),
                                               grads.vec(prefix + "bn1.beta"));
        for (std::size_t b = 0; b < n; ++b) {
            Matrix d_blockin = Matrix::Zero(d, bc.in[b].cols());
            conv1d_backward(params, grads, prefix + "conv1.weight", prefix + "conv1.bias", d, d, d1,
                            bc.in[b], d_z1[b], d_blockin);
            d_x[b] += d_blockin;  // residual skip
        }
    }

    // subject layer
    for (std::size_t b = 0; b < n; ++b) {
        grads.mat("subject.weight", d, d, cache.subjects[b]).noalias() +=
            d_x[b] * cache.x_lp[b].transpose();
        d_x[b] = params.mat("subject.weight", d, d, cache.subjects[b]).transpose() * d_x[b];
    }

    // linear projection
    auto d_wlp = grads.mat("linear_proj.weight", d, a_out);
    Vector& d_blp = grads.vec("linear_proj.bias");
    const auto w_lp = params.mat("linear_proj.weight", d, a_out);
    Matrix d_attn = Matrix::Zero(a_out, config_.in_channels);
    for (std::size_t b = 0; b < n; ++b) {
        d_wlp.noalias() += d_x[b] * cache.x_sa[b].transpose();
        d_blp += d_x[b].rowwise().sum();
        const Matrix d_xsa = w_lp.transpose() * d_x[b];
        d_attn.noalias() += d_xsa * cache.input[b].transpose();
    }

    // softmax rows, then the Fourier basis
    Matrix d_scores(a_out, config_.in_channels);
    for (Eigen::Index j = 0; j < d_attn.rows(); ++j) {
        const double dot = d_attn.row(j).dot(cache.attn.row(j));
        d_scores.row(j) = (cache.attn.row(j).array() * (d_attn.row(j).array() - dot)).matrix();
    }
    const int h = config_.sa_harmonics;
    grads.mat("spatial_attention.weight", a_out, 2 * h * h).noalias() = d_scores * fourier_basis_;

    return grads;
}

std::vector<LayerCount> MeegModule::layer_counts(const ModelParams& params) const {
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
    return {
        {"Spatial attention", count_prefix("spatial_attention")},
        {"Linear projection", count_prefix("linear_proj")},
        {"Subject layer", count_prefix("subject")},
        {"Residual dilated conv blocks", blocks},
        {"1x1 conv block", count_prefix("conv1x1")},
        {"Temporal aggregation", count_prefix("temporal")},
        {"MSE projection head", count_prefix("head_mse")},
        {"CLIP projection head", count_prefix("head_clip")},
    };
}

MeegModuleConfig reference_meeg_config(DeviceKind device, ModelSize size) {
    MeegModuleConfig c;
    if (device == DeviceKind::EEG) {
        c.in_channels = 64;
        c.timepoints = 144;
        if (size == ModelSize::Medium) {
            c.hidden = 181;
            c.n_blocks = 4;
            c.backbone_out = 564;
            c.n_subjects = 1;
        } else {
            c.hidden = 442;
            c.n_blocks = 5;
            c.backbone_out = 1526;
            c.n_subjects = 10;
        }
    } else if (device == DeviceKind::MEG) {
        c.in_channels = 272;
        c.timepoints = 180;
        if (size == ModelSize::Medium) {
            c.hidden = 50;
            c.n_blocks = 2;
            c.backbone_out = 152;
            c.n_subjects = 1;
        } else {
            c.hidden = 396;
            c.n_blocks = 4;
            c.backbone_out = 1411;
            c.n_subjects = 4;
        }
    } else {
        throw std::invalid_argument("reference_meeg_config: device must be eeg or meg");
    }
    return c;
}

MeegModuleConfig searched_meeg_config(DeviceKind device, ModelSize size) {
    // The published hyperparameter tables exchange the EEG and MEG size
    // settings relative to the architecture description tables.
    if (device == DeviceKind::EEG) {
        MeegModuleConfig c = reference_meeg_config(DeviceKind::MEG, size);
        c.in_channels = 64;
        c.timepoints = 144;
        c.n_subjects = size == ModelSize::Large ? 10 : 1;
        return c;
    }
    if (device == DeviceKind::MEG) {
        MeegModuleConfig c = reference_meeg_config(DeviceKind::EEG, size);
        c.in_channels = 272;
        c.timepoints = 180;
        c.n_subjects = size == ModelSize::Large ? 4 : 1;
        return c;
    }
    throw std::invalid_argument("searched_meeg_config: device must be eeg or meg");
}

Matrix default_sensor_grid(int n_channels) {
    if (n_channels < 1) throw std::invalid_argument("default_sensor_grid: need >= 1 channel");
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_channels))));
    const int rows = (n_channels + cols - 1) / cols;
    Matrix pos(n_channels, 2);
    for (int i = 0; i < n_channels; ++i) {
        const int r = i / cols;
        const int c = i % cols;
        pos(i, 0) = cols == 1 ? 0.5 : 0.1 + 0.8 * static_cast<double>(c) / (cols - 1);
        pos(i, 1) = rows == 1 ? 0.5 : 0.1 + 0.8 * static_cast<double>(r) / (rows - 1);
    }
    return pos;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const std::string& kind, const std::string& config_json,
                     const Matrix* sensor_positions) {
    io::TensorContainer container;
    json meta;
    meta["kind"] = kind;
    meta["config"] = json::parse(config_json);
    meta["segments"] = json::array();
    std::int64_t offset = 0;
    for (const auto& s : params.segments) {
        io::Tensor t;
        t.dtype = io::Dtype::F64;
        t.shape.assign(s.shape.begin(), s.shape.end());
        t.values.assign(s.values.data(), s.values.data() + s.values.size());
        container.tensors.emplace("param." + s.name, std::move(t));
        json entry;
        entry["name"] = s.name;
        entry["shape"] = std::vector<std::int64_t>(s.shape.begin(), s.shape.end());
        entry["offset"] = offset;
        entry["trainable"] = s.trainable;
        meta["segments"].push_back(entry);
        offset += s.numel();
    }
    if (sensor_positions != nullptr && sensor_positions->size() > 0) {
        container.tensors.emplace("sensor_positions", io::Tensor::from_matrix(*sensor_positions));
    }
    container.write(dir);
    std::ofstream out(dir / "model.json");
    out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw std::runtime_error("missing model.json in " + dir.string());
    json meta = json::parse(in);
    const io::TensorContainer container = io::TensorContainer::read(dir);
    Checkpoint ckpt;
    ckpt.kind = meta.at("kind").get<std::string>();
    ckpt.config_json = meta.at("config").dump();
    for (const auto& entry : meta.at("segments")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        Segment& seg = ckpt.params.add(
            name, std::vector<Eigen::Index>(shape.begin(), shape.end()),
            entry.value("trainable", true));
        const io::Tensor& t = container.at("param." + name);
        if (t.numel() != seg.numel()) {
            throw std::runtime_error("checkpoint segment size mismatch: " + name);
        }
        seg.values = Eigen::Map<const Vector>(t.values.data(),
                                              static_cast<Eigen::Index>(t.values.size()));
    }
    if (container.tensors.count("sensor_positions") > 0) {
        ckpt.sensor_positions = container.at("sensor_positions").as_matrix();
    }
    return ckpt;
}

}  // namespace neurodec::nn
