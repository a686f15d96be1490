#include "neurodec/loss.hpp"

#include <cmath>

namespace neurodec::train {

void LossConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("LossConfig: lambda must lie in [0,1]");
    }
    if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be > 0");
}

namespace {

Matrix normalized_rows(const Matrix& m, const char* what) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (!(norm > 0.0)) {
            throw std::invalid_argument(std::string(what) + ": zero-norm row " + std::to_string(i) +
                                        ", cosine undefined");
        }
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

/// Row-wise softmax of scores with the usual max-shift.
Matrix row_softmax(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        const Eigen::ArrayXd e = (scores.row(i).array() - m).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return out;
}

}  // namespace

double clip_loss(const Matrix& pred, const Matrix& target, double tau) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("clip_loss: shape mismatch");
    }
    if (pred.rows() < 1) throw std::invalid_argument("clip_loss: empty batch");
    if (!(tau > 0.0)) throw std::invalid_argument("clip_loss: tau must be > 0");
    const Matrix p_hat = normalized_rows(pred, "clip_loss pred");
    const Matrix z_hat = normalized_rows(target, "clip_loss target");
    const Matrix scores = (p_hat * z_hat.transpose()) / tau;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        const double lse = m + std::log((scores.row(i).array() - m).exp().sum());
        loss += lse - scores(i, i);
    }
    return loss / static_cast<double>(scores.rows());
}

Matrix clip_loss_grad(const Matrix& pred, const Matrix& target, double tau) {
    const Matrix z_hat = normalized_rows(target, "clip_loss target");
    const Eigen::Index batch = pred.rows();
    Matrix grad(pred.rows(), pred.cols());
    for (Eigen::Index i = 0; i < batch; ++i) {
        const double norm = pred.row(i).norm();
        if (!(norm > 0.0)) {
            throw std::invalid_argument("clip_loss: zero-norm row, cosine undefined");
        }
        const Vector p_hat = pred.row(i).transpose() / norm;
        Vector scores = (z_hat * p_hat) / tau;
        const double m = scores.maxCoeff();
        Eigen::ArrayXd soft = (scores.array() - m).exp();
        soft /= soft.sum();
        soft(i) -= 1.0;  // dL/dS_ij = (softmax - delta) / B
        const Vector d_phat = (z_hat.transpose() * soft.matrix()) /
                              (tau * static_cast<double>(batch));
        // through the normalization: (I - p_hat p_hat^T) / ||p||
        grad.row(i) = ((d_phat - p_hat * p_hat.dot(d_phat)) / norm).transpose();
    }
    return grad;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("mse_loss: shape mismatch");
    }
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Matrix mse_loss_grad(const Matrix& pred, const Matrix& target) {
    return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

double combined_loss(double clip, double mse, double lambda) {
    return lambda * clip + (1.0 - lambda) * mse;
}

}  // namespace neurodec::train
