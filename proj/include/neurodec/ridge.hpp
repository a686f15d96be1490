#pragma once

#include "neurodec/common.hpp"
#include "neurodec/preprocess.hpp"

#include <filesystem>
#include <vector>

namespace neurodec::ridge {

struct RidgeFit {
    Matrix weights;     // p x q
    Vector intercept;   // q
    double alpha_selected = 0.0;
    std::vector<double> alpha_grid;
    std::vector<double> cv_errors;  // aligned with alpha_grid
};

struct RidgeOptions {
    enum class Cv { LooGcv, KFold };
    Cv cv = Cv::LooGcv;
    int k_folds = 5;
    bool fit_intercept = true;
};

/// Penalized least squares min ||Y - XW - b||^2 + alpha ||W||^2 with the
/// alpha chosen from the grid by cross-validation. Features and targets are
/// centered before the solve; the intercept restores the means. One SVD of
/// the centered design serves every grid point on the loo-gcv path.
RidgeFit ridge_fit(const Matrix& X, const Matrix& Y, const std::vector<double>& alpha_grid,
                   const RidgeOptions& options = {});

Matrix ridge_predict(const RidgeFit& fit, const Matrix& X);

/// 33 log-spaced alphas over [1e-4, 1e8].
std::vector<double> default_decode_grid();
/// 35 log-spaced alphas over [1e-12, 1e22].
std::vector<double> default_encode_grid();

struct StepwiseResult {
    std::vector<double> time_s;
    std::vector<double> r;  // feature-wise Pearson R on the test rows
};

/// One ridge decoder per timepoint (channel pattern -> embedding), trained
/// on fit_rows and scored on test_rows.
StepwiseResult stepwise_decode(const prep::EpochSet& epochs, const Matrix& targets,
                               const std::vector<std::int64_t>& fit_rows,
                               const std::vector<std::int64_t>& test_rows,
                               const std::vector<double>& alpha_grid = default_decode_grid());

struct EncodeResult {
    std::vector<double> r;  // per channel
    std::vector<int> constant_channels;
};

/// Encoding direction: image embeddings -> scalar channel response, scored
/// with 2-fold cross-validated Pearson R (held-out predictions pooled across
/// folds before correlating). Alpha is selected per channel on the training
/// fold via the loo-gcv path.
EncodeResult encode(const Matrix& embeddings, const Matrix& responses,
                    const std::vector<double>& alpha_grid = default_encode_grid(), int folds = 2);

/// `timepoint_s,R` table.
void write_stepwise_csv(const std::filesystem::path& file, const StepwiseResult& result);
/// `channel,R` table.
void write_encode_csv(const std::filesystem::path& file, const EncodeResult& result);

}  // namespace neurodec::ridge
