#include "neurodec/ridge.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace neurodec::ridge {

namespace {

constexpr double kLooDenomFloor = 1e-12;

struct CenteredSvd {
    Eigen::RowVectorXd x_mean;
    Eigen::RowVectorXd y_mean;
    Matrix u;       // n x m
    Vector sigma;   // m
    Matrix v;       // p x m
    Matrix ut_y;    // m x q
    Matrix yc;      // n x q
};

CenteredSvd decompose(const Matrix& x, const Matrix& y, bool fit_intercept = true) {
    CenteredSvd d;
    if (fit_intercept) {
        d.x_mean = x.colwise().mean();
        d.y_mean = y.colwise().mean();
    } else {
        d.x_mean = Eigen::RowVectorXd::Zero(x.cols());
        d.y_mean = Eigen::RowVectorXd::Zero(y.cols());
    }
    const Matrix xc = x.rowwise() - d.x_mean;
    d.yc = y.rowwise() - d.y_mean;
    Eigen::BDCSVD<Matrix> svd(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    d.u = svd.matrixU();
    d.sigma = svd.singularValues();
    d.v = svd.matrixV();
    d.ut_y = d.u.transpose() * d.yc;
    return d;
}

Vector shrinkage(const Vector& sigma, double alpha) {
    return (sigma.array() * sigma.array() / (sigma.array() * sigma.array() + alpha)).matrix();
}

Matrix coefficients(const CenteredSvd& d, double alpha) {
    const Vector scale =
        (d.sigma.array() / (d.sigma.array() * d.sigma.array() + alpha)).matrix();
    return d.v * (scale.asDiagonal() * d.ut_y);
}

/// Leave-one-out residual matrix for one alpha: (Y - H Y) row-scaled by
/// 1/(1 - h_ii), with h_ii from the SVD of the centered design.
Matrix loo_residuals(const CenteredSvd& d, double alpha) {
    const Vector dshrink = shrinkage(d.sigma, alpha);
    const Matrix fitted = d.u * (dshrink.asDiagonal() * d.ut_y);
    Matrix resid = d.yc - fitted;
    const Vector h = (d.u.array().square().matrix() * dshrink);
    for (Eigen::Index i = 0; i < resid.rows(); ++i) {
        const double denom = std::max(1.0 - h(i), kLooDenomFloor);
        resid.row(i) /= denom;
    }
    return resid;
}

void validate_inputs(const Matrix& x, const Matrix& y, const std::vector<double>& grid) {
    if (x.rows() != y.rows()) throw std::invalid_argument("ridge_fit: X and Y row counts differ");
    if (x.rows() < 2) throw std::invalid_argument("ridge_fit: need at least 2 samples");
    if (grid.empty()) throw std::invalid_argument("ridge_fit: alpha grid is empty");
    for (double a : grid) {
        if (!(a > 0.0)) throw std::invalid_argument("ridge_fit: alphas must be positive");
    }
}

}  // namespace

RidgeFit ridge_fit(const Matrix& x, const Matrix& y, const std::vector<double>& alpha_grid,
                   const RidgeOptions& options) {
    validate_inputs(x, y, alpha_grid);
    RidgeFit fit;
    fit.alpha_grid = alpha_grid;
    fit.cv_errors.assign(alpha_grid.size(), 0.0);

    if (options.cv == RidgeOptions::Cv::LooGcv) {
        const CenteredSvd d = decompose(x, y, options.fit_intercept);
        for (std::size_t g = 0; g < alpha_grid.size(); ++g) {
            fit.cv_errors[g] = loo_residuals(d, alpha_grid[g]).squaredNorm() /
                               static_cast<double>(x.rows());
        }
        const std::size_t best = static_cast<std::size_t>(
            std::min_element(fit.cv_errors.begin(), fit.cv_errors.end()) - fit.cv_errors.begin());
        fit.alpha_selected = alpha_grid[best];
        fit.weights = coefficients(d, fit.alpha_selected);
        fit.intercept = (d.y_mean - d.x_mean * fit.weights).transpose();
        return fit;
    }

    // k-fold: contiguous folds over the row order as given.
    const int k = std::min<int>(options.k_folds, static_cast<int>(x.rows()));
    if (k < 2) throw std::invalid_argument("ridge_fit: k-fold needs k >= 2");
    std::vector<double> sq_err(alpha_grid.size(), 0.0);
    const Eigen::Index n = x.rows();
    for (int fold = 0; fold < k; ++fold) {
        const Eigen::Index lo = n * fold / k;
        const Eigen::Index hi = n * (fold + 1) / k;
        const Eigen::Index n_test = hi - lo;
        const Eigen::Index n_train = n - n_test;
        Matrix x_train(n_train, x.cols()), y_train(n_train, y.cols());
        Matrix x_test(n_test, x.cols()), y_test(n_test, y.cols());
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i >= lo && i < hi) {
                x_test.row(i - lo) = x.row(i);
                y_test.row(i - lo) = y.row(i);
            } else {
                x_train.row(r) = x.row(i);
                y_train.row(r) = y.row(i);
                ++r;
            }
        }
        const CenteredSvd d = decompose(x_train, y_train, options.fit_intercept);
        for (std::size_t g = 0; g < alpha_grid.size(); ++g) {
            const Matrix w = coefficients(d, alpha_grid[g]);
            const Matrix pred =
                ((x_test.rowwise() - d.x_mean) * w).rowwise() + d.y_mean;
            sq_err[g] += (pred - y_test).squaredNorm();
        }
    }
    for (std::size_t g = 0; g < alpha_grid.size(); ++g) {
        fit.cv_errors[g] = sq_err[g] / static_cast<double>(n);
    }
    const std::size_t best = static_cast<std::size_t>(
        std::min_element(fit.cv_errors.begin(), fit.cv_errors.end()) - fit.cv_errors.begin());
    fit.alpha_selected = alpha_grid[best];
    const CenteredSvd d = decompose(x, y, options.fit_intercept);
    fit.weights = coefficients(d, fit.alpha_selected);
    fit.intercept = (d.y_mean - d.x_mean * fit.weights).transpose();
    return fit;
}

Matrix ridge_predict(const RidgeFit& fit, const Matrix& x) {
    if (x.cols() != fit.weights.rows()) {
        throw std::invalid_argument("ridge_predict: feature dimension mismatch");
    }
    return (x * fit.weights).rowwise() + fit.intercept.transpose();
}

std::vector<double> default_decode_grid() { return logspace(1e-4, 1e8, 33); }
std::vector<double> default_encode_grid() { return logspace(1e-12, 1e22, 35); }

StepwiseResult stepwise_decode(const prep::EpochSet& epochs, const Matrix& targets,
                               const std::vector<std::int64_t>& fit_rows,
                               const std::vector<std::int64_t>& test_rows,
                               const std::vector<double>& alpha_grid) {
    const Eigen::Index n_time = epochs.n_timepoints();
    const Eigen::Index n_chan = epochs.n_channels();
    if (targets.rows() != epochs.n_trials()) {
        throw std::invalid_argument("stepwise_decode: targets must have one row per trial");
    }
    if (fit_rows.empty() || test_rows.empty()) {
        throw std::invalid_argument("stepwise_decode: empty fit or test rows");
    }
    StepwiseResult result;
    result.time_s.resize(static_cast<std::size_t>(n_time));
    result.r.resize(static_cast<std::size_t>(n_time));

    auto slice = [&](const std::vector<std::int64_t>& rows, Eigen::Index t, Matrix& x, Matrix& y) {
        x.resize(static_cast<Eigen::Index>(rows.size()), n_chan);
        y.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = static_cast<std::size_t>(rows[i]);
            x.row(static_cast<Eigen::Index>(i)) = epochs.tensors[r].col(t).transpose();
            y.row(static_cast<Eigen::Index>(i)) = targets.row(rows[i]);
        }
    };

    parallel_for(n_time, [&](std::int64_t t) {
        Matrix x_fit, y_fit, x_test, y_test;
        slice(fit_rows, t, x_fit, y_fit);
        slice(test_rows, t, x_test, y_test);
        const RidgeFit fit = ridge_fit(x_fit, y_fit, alpha_grid);
        const Matrix pred = ridge_predict(fit, x_test);
        result.time_s[static_cast<std::size_t>(t)] =
            epochs.window_start_s + (static_cast<double>(t) + 0.5) / epochs.rate_hz;
        double sum = 0.0;
        for (Eigen::Index f = 0; f < pred.cols(); ++f) {
            sum += pearson(pred.col(f), y_test.col(f));
        }
        result.r[static_cast<std::size_t>(t)] = sum / static_cast<double>(pred.cols());
    });
    return result;
}

EncodeResult encode(const Matrix& embeddings, const Matrix& responses,
                    const std::vector<double>& alpha_grid, int folds) {
    if (embeddings.rows() != responses.rows()) {
        throw std::invalid_argument("encode: one response row per trial required");
    }
    if (folds < 2 || embeddings.rows() < 2 * folds) {
        throw std::invalid_argument("encode: need >= 2 folds and enough trials per fold");
    }
    const Eigen::Index n = embeddings.rows();
    const Eigen::Index n_chan = responses.cols();
    Matrix pooled_pred(n, n_chan);

    for (int fold = 0; fold < folds; ++fold) {
        const Eigen::Index lo = n * fold / folds;
        const Eigen::Index hi = n * (fold + 1) / folds;
        const Eigen::Index n_test = hi - lo;
        const Eigen::Index n_train = n - n_test;
        Matrix x_train(n_train, embeddings.cols()), y_train(n_train, n_chan);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i >= lo && i < hi) continue;
            x_train.row(r) = embeddings.row(i);
            y_train.row(r) = responses.row(i);
            ++r;
        }
        const CenteredSvd d = decompose(x_train, y_train);
        // Per-channel alpha: loo errors for every (alpha, channel) pair.
        Matrix loo_err(static_cast<Eigen::Index>(alpha_grid.size()), n_chan);
        for (std::size_t g = 0; g < alpha_grid.size(); ++g) {
            loo_err.row(static_cast<Eigen::Index>(g)) =
                loo_residuals(d, alpha_grid[g]).colwise().squaredNorm();
        }
        Matrix x_test_c = embeddings.middleRows(lo, n_test).rowwise() - d.x_mean;
        for (Eigen::Index c = 0; c < n_chan; ++c) {
            Eigen::Index best = 0;
            loo_err.col(c).minCoeff(&best);
            const double alpha = alpha_grid[static_cast<std::size_t>(best)];
            const Vector scale =
                (d.sigma.array() / (d.sigma.array() * d.sigma.array() + alpha)).matrix();
            const Vector w = d.v * (scale.asDiagonal() * d.ut_y.col(c));
            pooled_pred.col(c).segment(lo, n_test) =
                (x_test_c * w).array() + d.y_mean(c);
        }
    }

    EncodeResult result;
    result.r.resize(static_cast<std::size_t>(n_chan));
    for (Eigen::Index c = 0; c < n_chan; ++c) {
        const double var_true = (responses.col(c).array() - responses.col(c).mean()).square().sum();
        const double var_pred =
            (pooled_pred.col(c).array() - pooled_pred.col(c).mean()).square().sum();
        if (var_true <= 0.0 || var_pred <= 0.0) {
            result.constant_channels.push_back(static_cast<int>(c));
            result.r[static_cast<std::size_t>(c)] = 0.0;
            continue;
        }
        result.r[static_cast<std::size_t>(c)] = pearson(pooled_pred.col(c), responses.col(c));
    }
    return result;
}

void write_stepwise_csv(const std::filesystem::path& file, const StepwiseResult& result) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << "timepoint_s,R\n";
    out.precision(12);
    for (std::size_t t = 0; t < result.r.size(); ++t) {
        out << result.time_s[t] << ',' << result.r[t] << '\n';
    }
}

void write_encode_csv(const std::filesystem::path& file, const EncodeResult& result) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    out << "channel,R\n";
    out.precision(12);
    for (std::size_t c = 0; c < result.r.size(); ++c) {
        out << c << ',' << result.r[c] << '\n';
    }
}

}  // namespace neurodec::ridge
