#pragma once

#include <map>
#include <string>

#include "carl/data.hpp"
#include "carl/tensor.hpp"

namespace carl {

struct EncoderConfig {
    std::size_t vocab_size = kVocabSize;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_len = 32;
    double dropout_p = 0.1;
    std::size_t d_proj = 32;

    void validate() const;
};

// All learnable weights of one branch, keyed by name. std::map keeps the
// iteration order deterministic for checkpoints and the optimizer.
struct EncoderParams {
    std::map<std::string, TensorPtr> named;

    const TensorPtr& at(const std::string& name) const;
    std::vector<TensorPtr> all() const;
    void zero_grad();
};

EncoderParams init_params(const EncoderConfig& cfg, Rng& rng, bool requires_grad = true);

// Target branch owns encoder + projection only (no prediction/detection head).
bool is_target_param(const std::string& name);
EncoderParams make_target_copy(const EncoderParams& online);

struct EncodeResult {
    TensorPtr embeddings;  // [N*T x d_model], the PGD/saliency hook
    TensorPtr hidden;      // [N*T x d_model], final hidden states
    TensorPtr sentence;    // [N x d_model], pooler over CLS (no activation)
};

EncodeResult encode(const EncoderParams& params, const EncoderConfig& cfg,
                    const TokenBatch& batch, bool use_dropout, Rng& rng,
                    const TensorPtr& override_embeddings = nullptr);

TensorPtr project(const EncoderParams& params, const TensorPtr& sentence);
TensorPtr predict(const EncoderParams& params, const TensorPtr& z);

// Per-token perturbation probability, [N*T x 1] in (0,1).
TensorPtr detect_perturbed(const EncoderParams& params, const TensorPtr& hidden);

}  // namespace carl
