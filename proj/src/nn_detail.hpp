#pragma once

// Internal layer primitives shared by the two brain-module translation
// units. Each op keeps exactly the intermediates its backward pass needs.

#include "neurodec/common.hpp"
#include "neurodec/model.hpp"

#include <vector>

namespace neurodec::nn::detail {

inline Matrix gelu_mat(const Matrix& x) {
    return x.unaryExpr([](double v) { return gelu(v); });
}

inline Matrix gelu_grad_mat(const Matrix& x) {
    return x.unaryExpr([](double v) { return gelu_grad(v); });
}

/// shift(x, s)[:, t] = x[:, t + s], zero-filled outside the valid range.
inline Matrix shift_cols(const Matrix& x, Eigen::Index s) {
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    const Eigen::Index t_lo = std::max<Eigen::Index>(0, -s);
    const Eigen::Index t_hi = std::min<Eigen::Index>(x.cols(), x.cols() - s);
    if (t_hi > t_lo) out.middleCols(t_lo, t_hi - t_lo) = x.middleCols(t_lo + s, t_hi - t_lo);
    return out;
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kLnEps = 1e-5;

struct BnCache {
    std::vector<Matrix> xhat;
    Vector inv_std;
    double count = 0.0;
    bool train = false;
};

/// Batch norm over the channel dimension; statistics pool samples and
/// timepoints. Train mode also refreshes the running buffers.
inline std::vector<Matrix> bn_forward(const std::vector<Matrix>& xs, const Vector& gamma,
                                      const Vector& beta, Vector& running_mean,
                                      Vector& running_var, Mode mode, BnCache* cache) {
    const Eigen::Index c_dim = xs.front().rows();
    Vector mean(c_dim), var(c_dim);
    double count = 0.0;
    if (mode == Mode::Train) {
        mean.setZero();
        for (const auto& x : xs) {
            mean += x.rowwise().sum();
            count += static_cast<double>(x.cols());
        }
        mean /= count;
        var.setZero();
        for (const auto& x : xs) {
            var += (x.colwise() - mean).array().square().matrix().rowwise().sum();
        }
        var /= count;
        const double unbias = count > 1.5 ? count / (count - 1.0) : 1.0;
        running_mean = (1.0 - kBnMomentum) * running_mean + kBnMomentum * mean;
        running_var = (1.0 - kBnMomentum) * running_var + kBnMomentum * (unbias * var.array()).matrix();
    } else {
        mean = running_mean;
        var = running_var;
        for (const auto& x : xs) count += static_cast<double>(x.cols());
    }
    const Vector inv_std = (var.array() + kBnEps).sqrt().inverse().matrix();
    std::vector<Matrix> out;
    out.reserve(xs.size());
    std::vector<Matrix> xhat;
    xhat.reserve(xs.size());
    for (const auto& x : xs) {
        Matrix h = ((x.colwise() - mean).array().colwise() * inv_std.array()).matrix();
        out.push_back(((h.array().colwise() * gamma.array()).colwise() + beta.array()).matrix());
        xhat.push_back(std::move(h));
    }
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = inv_std;
        cache->count = count;
        cache->train = mode == Mode::Train;
    }
    return out;
}

inline std::vector<Matrix> bn_backward(const BnCache& cache, const Vector& gamma,
                                       const std::vector<Matrix>& d_out, Vector& d_gamma,
                                       Vector& d_beta) {
    const Eigen::Index c_dim = gamma.size();
    Vector sum_dy = Vector::Zero(c_dim);
    Vector sum_dy_xhat = Vector::Zero(c_dim);
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        sum_dy += d_out[b].rowwise().sum();
        sum_dy_xhat += (d_out[b].array() * cache.xhat[b].array()).matrix().rowwise().sum();
    }
    d_beta += sum_dy;
    d_gamma += sum_dy_xhat;
    std::vector<Matrix> d_in;
    d_in.reserve(d_out.size());
    if (!cache.train) {
        for (const auto& dy : d_out) {
            d_in.push_back(
                (dy.array().colwise() * (gamma.array() * cache.inv_std.array())).matrix());
        }
        return d_in;
    }
    const double n = cache.count;
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        const Matrix term = (d_out[b] * n).colwise() - sum_dy -
                            (cache.xhat[b].array().colwise() * sum_dy_xhat.array()).matrix();
        d_in.push_back(
            (term.array().colwise() * (gamma.array() * cache.inv_std.array() / n)).matrix());
    }
    return d_in;
}

struct LnCache {
    std::vector<Matrix> xhat;
    std::vector<Vector> inv_std;  // per sample, one entry per column
};

/// Layer norm over the feature (row) dimension, applied column by column.
inline std::vector<Matrix> ln_forward(const std::vector<Matrix>& xs, const Vector& gamma,
                                      const Vector& beta, LnCache* cache) {
    std::vector<Matrix> out;
    out.reserve(xs.size());
    std::vector<Matrix> xhat;
    std::vector<Vector> inv_stds;
    for (const auto& x : xs) {
        Matrix h(x.rows(), x.cols());
        Vector inv_std(x.cols());
        for (Eigen::Index t = 0; t < x.cols(); ++t) {
            const double mean = x.col(t).mean();
            const double var = (x.col(t).array() - mean).square().mean();
            inv_std(t) = 1.0 / std::sqrt(var + kLnEps);
            h.col(t) = (x.col(t).array() - mean) * inv_std(t);
        }
        out.push_back(((h.array().colwise() * gamma.array()).colwise() + beta.array()).matrix());
        xhat.push_back(std::move(h));
        inv_stds.push_back(std::move(inv_std));
    }
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_stds);
    }
    return out;
}

inline std::vector<Matrix> ln_backward(const LnCache& cache, const Vector& gamma,
                                       const std::vector<Matrix>& d_out, Vector& d_gamma,
                                       Vector& d_beta) {
    std::vector<Matrix> d_in;
    d_in.reserve(d_out.size());
    const double h_dim = static_cast<double>(gamma.size());
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        const Matrix& dy = d_out[b];
        const Matrix& xhat = cache.xhat[b];
        d_gamma += (dy.array() * xhat.array()).matrix().rowwise().sum();
        d_beta += dy.rowwise().sum();
        Matrix dx(dy.rows(), dy.cols());
        for (Eigen::Index t = 0; t < dy.cols(); ++t) {
            const Vector dxhat = (dy.col(t).array() * gamma.array()).matrix();
            const double s1 = dxhat.sum();
            const double s2 = dxhat.dot(xhat.col(t));
            dx.col(t) = (cache.inv_std[b](t) / h_dim) *
                        (h_dim * dxhat.array() - s1 - xhat.col(t).array() * s2).matrix();
        }
        d_in.push_back(std::move(dx));
    }
    return d_in;
}

struct DropoutCache {
    std::vector<Matrix> mask;  // inverted scaling baked in
    bool active = false;
};

inline std::vector<Matrix> dropout_forward(const std::vector<Matrix>& xs, double p, Mode mode,
                                           Rng& rng, DropoutCache* cache) {
    if (mode == Mode::Eval || p <= 0.0) {
        if (cache != nullptr) cache->active = false;
        return xs;
    }
    const double keep = 1.0 - p;
    std::vector<Matrix> out;
    out.reserve(xs.size());
    std::vector<Matrix> masks;
    masks.reserve(xs.size());
    for (const auto& x : xs) {
        Matrix mask(x.rows(), x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
            }
        }
        out.push_back((x.array() * mask.array()).matrix());
        masks.push_back(std::move(mask));
    }
    if (cache != nullptr) {
        cache->mask = std::move(masks);
        cache->active = true;
    }
    return out;
}

inline std::vector<Matrix> dropout_backward(const DropoutCache& cache,
                                            const std::vector<Matrix>& d_out) {
    if (!cache.active) return d_out;
    std::vector<Matrix> d_in;
    d_in.reserve(d_out.size());
    for (std::size_t b = 0; b < d_out.size(); ++b) {
        d_in.push_back((d_out[b].array() * cache.mask[b].array()).matrix());
    }
    return d_in;
}

}  // namespace neurodec::nn::detail
