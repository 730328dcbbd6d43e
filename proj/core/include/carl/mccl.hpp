#pragma once

#include "carl/encoder.hpp"
#include "carl/tensor.hpp"

namespace carl {

struct MomentumState {
    double m_initial = 0.9996;
    std::size_t k = 0;
    std::size_t total_steps = 1;
    double m_current = 0.9996;
};

enum class SimilarityKind { embedding, label };

struct SimilarityMatrix {
    TensorPtr values;  // [N x N], entries in [-1,1]
    SimilarityKind kind;
};

struct RowDistribution {
    TensorPtr rows;  // [N x N], each row a probability distribution
    double temperature;
};

// theta_t <- m*theta_t + (1-m)*theta_o over the shared (encoder+projection) names.
void ema_update(EncoderParams& target, const EncoderParams& online, double m);

// m_new = 1 - (1 - m_initial)*(cos(pi*k/K)+1)/2; monotone from m_initial to 1.
double momentum_schedule(std::size_t k, std::size_t total_steps, double m_initial);

// Pairwise cosine of online predictions vs gradient-detached target projections.
SimilarityMatrix embedding_similarity(const TensorPtr& q_online, const TensorPtr& z_target);

// Cosine of (valence, arousal) label vectors; norms floored at 1e-8, a
// near-zero label vector logs a warning (direction ill-defined).
SimilarityMatrix label_similarity(const std::vector<double>& labels_va, std::size_t n);

RowDistribution to_distribution(const SimilarityMatrix& s, double temperature = 0.05);

// Symmetric cross-entropy between rows, averaged over rows. Gradients flow
// through p_sim only; p_va comes from labels and is constant.
TensorPtr mccl_loss(const RowDistribution& p_sim, const RowDistribution& p_va);

}  // namespace carl
