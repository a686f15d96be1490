#pragma once

#include "neurodec/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neurodec::metrics {

enum class Head { Mse, Clip };

struct PredRow {
    int subject_id = 0;
    int image_id = 0;
    int repetition_index = 1;
    Head head = Head::Mse;
    Vector vector;
};

using PredictionSet = std::vector<PredRow>;

enum class AveragingScope { SingleTrial, SubjectAverage, InstanceAverage };

std::string averaging_name(AveragingScope s);
AveragingScope parse_averaging(const std::string& name);

/// Mean feature-wise Pearson correlation over M >= 3 rows. Zero-variance
/// features contribute 0 and are counted in *n_degenerate when provided.
double pearson_featurewise(const Matrix& pred, const Matrix& target, int* n_degenerate = nullptr);

/// Averages prediction vectors per (subject, image) or per image. Aggregated
/// rows carry repetition_index 0. Output order is keyed, independent of the
/// input row order.
PredictionSet average_predictions(const PredictionSet& preds, AveragingScope scope);

/// Candidate image ids ranked by cosine similarity to the prediction,
/// descending; exact ties broken toward the lower image id.
std::vector<int> retrieve_topk(const Vector& pred, const Matrix& candidates,
                               const std::vector<int>& candidate_ids, int k);

/// Fraction of predictions whose true image lands in the top k.
double topk_accuracy(const PredictionSet& preds, const Matrix& candidates,
                     const std::vector<int>& candidate_ids, int k);

struct FeatureStats {
    Vector mean;
    Vector stddev;
};

FeatureStats feature_stats(const Matrix& rows);

/// Re-expresses predictions in the training distribution: z-score each
/// feature over the prediction set, then invert with train stats. Features
/// with zero spread pass through unchanged (counted in *n_passthrough).
Matrix renormalize_predictions(const Matrix& pred, const FeatureStats& train_stats,
                               int* n_passthrough = nullptr);

using RepresentationProvider = std::map<int, Vector>;

/// Loads a provider from a tensor container directory: tensors named by the
/// decimal image id, one feature vector each.
RepresentationProvider load_representation_provider(const std::filesystem::path& dir);
void save_representation_provider(const std::filesystem::path& dir,
                                  const RepresentationProvider& provider);

enum class ReconMode { Pointwise, TwoWay };

/// Pointwise: mean over pairs of corr(rep(image), rep(recon)). TwoWay:
/// fraction of (pair, distractor) comparisons the true image wins strictly.
double reconstruction_metric(const std::vector<std::pair<int, int>>& pairs,
                             const RepresentationProvider& provider, ReconMode mode);

}  // namespace neurodec::metrics
