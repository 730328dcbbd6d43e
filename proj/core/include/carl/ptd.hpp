#pragma once

#include <functional>

#include "carl/data.hpp"
#include "carl/tensor.hpp"

namespace carl {

struct SaliencyScores {
    std::size_t n = 0, t = 0;
    std::vector<double> g;     // [n*t], non-negative; CLS and padded positions are 0
    std::vector<double> mask;  // [n*t] attention mask, needed to count real tokens
};

struct SalientSet {
    std::vector<std::vector<std::size_t>> indices;  // per sentence, token positions
    std::vector<double> mask;                       // [n*t], 1 on selected positions
    std::size_t n = 0, t = 0;
    std::size_t total() const;
};

struct PTDConfig {
    double ratio = 0.10;
    std::size_t pgd_steps = 3;
    double alpha = 5.0;      // paper preset; smoke preset uses 0.25
    double epsilon = 5e-9;   // paper preset; smoke preset uses 0.5
    double frobenius_cap = 0.0;  // <= 0 means epsilon * sqrt(|S_total|)
    double gamma = 2.0;

    void validate() const;
};

// g[i][t] = L2 norm over the embedding axis of dL/de_t; CLS and pads zeroed.
SaliencyScores token_saliency(const std::vector<double>& embedding_grads, std::size_t n,
                              std::size_t t, std::size_t d, const std::vector<double>& mask);

// Per sentence the k = max(1, floor(ratio * real_len)) largest scores;
// ties broken toward the smaller token index. Never selects CLS or pads.
SalientSet select_salient(const SaliencyScores& g, double ratio);

// Iterated sign-ascent on salient token embeddings with per-token L2
// epsilon-ball projection and a final whole-matrix Frobenius rescale.
// loss_fn must build a fresh scalar loss from a leaf embedding node.
// Returns the perturbation delta-e; e0 is never mutated.
std::vector<double> pgd_attack(const std::vector<double>& e0, std::size_t n, std::size_t t,
                               std::size_t d, const SalientSet& salient,
                               const std::function<TensorPtr(const TensorPtr&)>& loss_fn,
                               const PTDConfig& cfg);

// e~ = e + delta_e on masked positions, untouched elsewhere.
std::vector<double> apply_perturbation(const std::vector<double>& e,
                                       const std::vector<double>& delta_e,
                                       const std::vector<double>& mask, std::size_t d);
// Graph variant: adds the masked (constant) perturbation onto the embedding node.
TensorPtr apply_perturbation(const TensorPtr& e, const std::vector<double>& delta_e,
                             const std::vector<double>& mask, std::size_t d);

// Mean over valid positions of -(1-p_t)^gamma * log(p_t) with
// p_t = p where perturbed, 1-p where clean.
TensorPtr focal_loss(const TensorPtr& p, const std::vector<double>& perturbed_mask,
                     const std::vector<double>& valid_mask, double gamma);

}  // namespace carl
