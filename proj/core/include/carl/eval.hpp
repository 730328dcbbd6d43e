#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace carl {

struct ProbeReport {
    std::string task;
    // regression metrics
    double mae = 0.0;
    double pearson_r = 0.0;
    double spearman_rho = 0.0;
    // classification metrics (macro-averaged)
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct GeometryReport {
    double alignment = 0.0;   // >= 0, lower is better
    double uniformity = 0.0;  // <= 0, lower is better
};

struct CorrelationStats {
    double mae;
    double pearson_r;
    double spearman_rho;
};

struct PcaResult {
    std::vector<double> coords;              // [n x dims] row-major
    std::vector<double> explained_fraction;  // per returned component
    std::size_t dims = 0;                    // components actually returned
};

// MAE plus Pearson/Spearman (average ranks on ties). Throws on n < 3 or
// constant inputs (correlation undefined).
CorrelationStats correlation_stats(const std::vector<double>& pred,
                                   const std::vector<double>& truth);

// Ridge regression (closed form, regularizer 1e-3 * trace(X^T X)/d) on a
// seeded 80/20 split; metrics on the test predictions.
ProbeReport regression_probe(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                             const std::vector<double>& targets, std::uint64_t split_seed);

// Full-batch multinomial logistic regression (500 iterations, step 0.1,
// unregularized); accuracy and macro precision/recall/F1 on the test split.
ProbeReport classification_probe(const std::vector<double>& embeddings, std::size_t n,
                                 std::size_t d, const std::vector<std::string>& labels,
                                 std::uint64_t split_seed);

// Mean squared distance between L2-normalized positive pairs.
double alignment(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                 const std::vector<std::pair<std::size_t, std::size_t>>& positive_pairs);

// log mean over distinct pairs of exp(-2 ||x_i - x_j||^2), L2-normalized.
double uniformity(const std::vector<double>& embeddings, std::size_t n, std::size_t d);

// Same-emotion-tag pairs, subsampled to at most max_pairs.
std::vector<std::pair<std::size_t, std::size_t>> emotion_positive_pairs(
    const std::vector<std::string>& emotions, std::size_t max_pairs = 10000,
    std::uint64_t seed = 0);

// Top-`dims` principal components via power iteration with deflation
// (tol 1e-9, <= 1000 iterations, seeded start); first nonzero loading of
// each component is made positive.
PcaResult pca_project(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                      std::size_t dims = 2, std::uint64_t seed = 13);

// Rank-based ROC AUC with tie handling (detector quality metric).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace carl
