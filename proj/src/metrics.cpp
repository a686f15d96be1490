#include "neurodec/metrics.hpp"

#include "neurodec/tensorio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

namespace neurodec::metrics {

std::string averaging_name(AveragingScope s) {
    switch (s) {
        case AveragingScope::SingleTrial: return "single";
        case AveragingScope::SubjectAverage: return "subject";
        case AveragingScope::InstanceAverage: return "instance";
    }
    throw std::logic_error("unreachable averaging scope");
}

AveragingScope parse_averaging(const std::string& name) {
    if (name == "single") return AveragingScope::SingleTrial;
    if (name == "subject") return AveragingScope::SubjectAverage;
    if (name == "instance") return AveragingScope::InstanceAverage;
    throw std::invalid_argument("unknown averaging scope: " + name +
                                " (expected single|subject|instance)");
}

double pearson_featurewise(const Matrix& pred, const Matrix& target, int* n_degenerate) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("pearson_featurewise: shape mismatch");
    }
    if (pred.rows() < 3) {
        throw std::invalid_argument("pearson_featurewise: need at least 3 rows");
    }
    int degenerate = 0;
    double sum = 0.0;
    for (Eigen::Index f = 0; f < pred.cols(); ++f) {
        const Vector a = pred.col(f);
        const Vector b = target.col(f);
        const double va = (a.array() - a.mean()).matrix().squaredNorm();
        const double vb = (b.array() - b.mean()).matrix().squaredNorm();
        if (va <= 0.0 || vb <= 0.0) {
            ++degenerate;  // counts as correlation 0, keeps the F denominator stable
            continue;
        }
        sum += pearson(a, b);
    }
    if (n_degenerate != nullptr) *n_degenerate = degenerate;
    return sum / static_cast<double>(pred.cols());
}

PredictionSet average_predictions(const PredictionSet& preds, AveragingScope scope) {
    if (scope == AveragingScope::SingleTrial) return preds;
    // key: (subject or -1, image, head)
    std::map<std::tuple<int, int, int>, std::pair<Vector, int>> groups;
    for (const auto& row : preds) {
        const int subj = scope == AveragingScope::SubjectAverage ? row.subject_id : -1;
        const auto key = std::make_tuple(subj, row.image_id, static_cast<int>(row.head));
        auto it = groups.find(key);
        if (it == groups.end()) {
            groups.emplace(key, std::make_pair(row.vector, 1));
        } else {
            if (it->second.first.size() != row.vector.size()) {
                throw std::invalid_argument("average_predictions: inconsistent vector dimensions");
            }
            it->second.first += row.vector;
            it->second.second += 1;
        }
    }
    PredictionSet out;
    out.reserve(groups.size());
    for (const auto& [key, acc] : groups) {
        PredRow row;
        row.subject_id = std::get<0>(key);
        row.image_id = std::get<1>(key);
        row.head = static_cast<Head>(std::get<2>(key));
        row.repetition_index = 0;
        row.vector = acc.first / static_cast<double>(acc.second);
        out.push_back(std::move(row));
    }
    return out;
}

namespace {

double cosine(const Vector& a, const Vector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na <= 0.0 || nb <= 0.0) {
        throw std::invalid_argument("retrieval: zero-norm vector, cosine undefined");
    }
    return a.dot(b) / (na * nb);
}

}  // namespace

std::vector<int> retrieve_topk(const Vector& pred, const Matrix& candidates,
                               const std::vector<int>& candidate_ids, int k) {
    if (candidates.rows() != static_cast<Eigen::Index>(candidate_ids.size())) {
        throw std::invalid_argument("retrieve_topk: candidate ids do not match matrix rows");
    }
    if (candidates.rows() < k) {
        throw std::invalid_argument("retrieve_topk: fewer candidates than k");
    }
    std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(candidates.rows()));
    for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
        scored[static_cast<std::size_t>(i)] = {cosine(pred, candidates.row(i).transpose()),
                                               candidate_ids[static_cast<std::size_t>(i)]};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // tie: lower image id first
    });
    std::vector<int> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = scored[static_cast<std::size_t>(i)].second;
    return out;
}

double topk_accuracy(const PredictionSet& preds, const Matrix& candidates,
                     const std::vector<int>& candidate_ids, int k) {
    if (preds.empty()) throw std::invalid_argument("topk_accuracy: empty prediction set");
    int hits = 0;
    for (const auto& row : preds) {
        const std::vector<int> ranked = retrieve_topk(row.vector, candidates, candidate_ids, k);
        if (std::find(ranked.begin(), ranked.end(), row.image_id) != ranked.end()) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

FeatureStats feature_stats(const Matrix& rows) {
    if (rows.rows() < 1) throw std::invalid_argument("feature_stats: empty matrix");
    FeatureStats s;
    s.mean = rows.colwise().mean();
    s.stddev.resize(rows.cols());
    for (Eigen::Index f = 0; f < rows.cols(); ++f) {
        const double var = (rows.col(f).array() - s.mean(f)).square().mean();
        s.stddev(f) = std::sqrt(var);
    }
    return s;
}

Matrix renormalize_predictions(const Matrix& pred, const FeatureStats& train_stats,
                               int* n_passthrough) {
    if (pred.cols() != train_stats.mean.size() || pred.cols() != train_stats.stddev.size()) {
        throw std::invalid_argument("renormalize_predictions: train stats dimension mismatch");
    }
    const FeatureStats own = feature_stats(pred);
    Matrix out = pred;
    int passthrough = 0;
    for (Eigen::Index f = 0; f < pred.cols(); ++f) {
        if (own.stddev(f) <= 0.0) {
            ++passthrough;
            continue;
        }
        out.col(f) = ((pred.col(f).array() - own.mean(f)) / own.stddev(f)) * train_stats.stddev(f) +
                     train_stats.mean(f);
    }
    if (n_passthrough != nullptr) *n_passthrough = passthrough;
    return out;
}

RepresentationProvider load_representation_provider(const std::filesystem::path& dir) {
    const io::TensorContainer c = io::TensorContainer::read(dir);
    RepresentationProvider provider;
    for (const auto& [name, tensor] : c.tensors) {
        int id = 0;
        const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), id);
        if (ec != std::errc{} || ptr != name.data() + name.size()) {
            throw std::invalid_argument("representation container: tensor name '" + name +
                                        "' is not an image id");
        }
        provider[id] = Eigen::Map<const Vector>(tensor.values.data(),
                                                static_cast<Eigen::Index>(tensor.values.size()));
    }
    return provider;
}

void save_representation_provider(const std::filesystem::path& dir,
                                  const RepresentationProvider& provider) {
    io::TensorContainer c;
    for (const auto& [id, vec] : provider) {
        io::Tensor t;
        t.dtype = io::Dtype::F64;
        t.shape = {vec.size()};
        t.values.assign(vec.data(), vec.data() + vec.size());
        c.tensors[std::to_string(id)] = std::move(t);
    }
    c.write(dir);
}

double reconstruction_metric(const std::vector<std::pair<int, int>>& pairs,
                             const RepresentationProvider& provider, ReconMode mode) {
    if (pairs.empty()) throw std::invalid_argument("reconstruction_metric: no pairs");
    auto rep = [&](int id) -> const Vector& {
        auto it = provider.find(id);
        if (it == provider.end()) {
            throw std::invalid_argument("reconstruction_metric: provider missing id " +
                                        std::to_string(id));
        }
        return it->second;
    };
    const Eigen::Index dim = rep(pairs.front().first).size();
    for (const auto& [img, recon] : pairs) {
        if (rep(img).size() != dim || rep(recon).size() != dim) {
            throw std::invalid_argument("reconstruction_metric: provider vectors differ in dimension");
        }
    }
    if (mode == ReconMode::Pointwise) {
        double sum = 0.0;
        for (const auto& [img, recon] : pairs) sum += pearson(rep(img), rep(recon));
        return sum / static_cast<double>(pairs.size());
    }
    // two-way: every other pair's true image serves as distractor
    std::int64_t wins = 0, comparisons = 0;
    for (const auto& [img, recon] : pairs) {
        const double own = pearson(rep(img), rep(recon));
        for (const auto& [other_img, other_recon] : pairs) {
            if (other_img == img) continue;
            ++comparisons;
            if (own > pearson(rep(other_img), rep(recon))) ++wins;
        }
    }
    if (comparisons == 0) {
        throw std::invalid_argument("reconstruction_metric: two-way needs >= 2 distinct images");
    }
    return static_cast<double>(wins) / static_cast<double>(comparisons);
}

}  // namespace neurodec::metrics
