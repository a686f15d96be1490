#pragma once

// Finite-difference gradient verification shared by the unit tests and the
// acceptance suite. The loss path (combined contrastive + reconstruction)
// is evaluated with a frozen dropout seed so both probes of the central
// difference see identical masks.

#include "neurodec/loss.hpp"
#include "neurodec/model.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace gradcheck {

using neurodec::Matrix;

struct Result {
    double max_rel_err = 0.0;
    std::string worst_segment;
    std::int64_t n_checked = 0;
};

template <typename Module>
double combined_loss_at(const Module& module, neurodec::nn::ModelParams& params,
                        const std::vector<Matrix>& batch, const std::vector<int>& subjects,
                        const Matrix& targets, std::uint64_t drop_seed) {
    const neurodec::nn::HeadOutputs out =
        module.forward(params, batch, subjects, neurodec::nn::Mode::Train, drop_seed, nullptr);
    const double l_clip = neurodec::train::clip_loss(out.clip, targets, 1.0);
    const double l_mse = neurodec::train::mse_loss(out.mse, targets);
    return neurodec::train::combined_loss(l_clip, l_mse, 0.25);
}

/// Central finite differences over every trainable coordinate.
template <typename Module>
Result check_gradients(const Module& module, neurodec::nn::ModelParams params,
                       const std::vector<Matrix>& batch, const std::vector<int>& subjects,
                       const Matrix& targets, std::uint64_t drop_seed, double step = 1e-5) {
    typename Module::CachePtr cache;
    const neurodec::nn::HeadOutputs out =
        module.forward(params, batch, subjects, neurodec::nn::Mode::Train, drop_seed, &cache);
    const Matrix d_clip = 0.25 * neurodec::train::clip_loss_grad(out.clip, targets, 1.0);
    const Matrix d_mse = 0.75 * neurodec::train::mse_loss_grad(out.mse, targets);
    const neurodec::nn::ModelParams analytic = module.backward(params, *cache, d_mse, d_clip);

    Result res;
    for (std::size_t seg = 0; seg < params.segments.size(); ++seg) {
        if (!params.segments[seg].trainable) continue;
        auto& values = params.segments[seg].values;
        for (Eigen::Index i = 0; i < values.size(); ++i) {
            const double saved = values(i);
            values(i) = saved + step;
            const double f_plus = combined_loss_at(module, params, batch, subjects, targets, drop_seed);
            values(i) = saved - step;
            const double f_minus = combined_loss_at(module, params, batch, subjects, targets, drop_seed);
            values(i) = saved;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double an = analytic.segments[seg].values(i);
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            const double rel = std::fabs(fd - an) / denom;
            ++res.n_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_segment = params.segments[seg].name;
            }
        }
    }
    return res;
}

}  // namespace gradcheck
