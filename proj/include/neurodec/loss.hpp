#pragma once

#include "neurodec/common.hpp"

namespace neurodec::train {

struct LossConfig {
    double lambda = 0.25;  // weight of the contrastive term
    double tau = 1.0;      // softmax temperature

    void validate() const;
};

/// Batch-contrastive loss over in-batch candidates (brain-to-image term
/// only): -(1/B) sum_i log softmax_j(cos(pred_i, target_j)/tau) at j = i.
double clip_loss(const Matrix& pred, const Matrix& target, double tau);

/// Gradient of clip_loss with respect to pred.
Matrix clip_loss_grad(const Matrix& pred, const Matrix& target, double tau);

/// (1/NF) sum of squared errors.
double mse_loss(const Matrix& pred, const Matrix& target);

Matrix mse_loss_grad(const Matrix& pred, const Matrix& target);

double combined_loss(double clip, double mse, double lambda);

}  // namespace neurodec::train
