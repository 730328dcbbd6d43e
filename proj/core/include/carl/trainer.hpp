#pragma once

#include <iosfwd>
#include <optional>

#include "carl/data.hpp"
#include "carl/encoder.hpp"
#include "carl/mccl.hpp"
#include "carl/ptd.hpp"

namespace carl {

struct TrainConfig {
    double lambda1 = 0.8;
    double lambda2 = 0.2;
    double lr_peak = 1e-3;
    std::size_t epochs = 2;
    std::size_t batch_size = 16;
    double warmup_frac = 0.10;
    std::size_t restart_period = 0;  // 0 = one cosine cycle over all post-warmup steps
    double weight_decay = 0.01;
    std::uint64_t seed = 42;
    std::size_t eval_every = 10;
    bool deterministic = true;
    double m_initial = 0.9996;
    double tau_sim = 0.05;
    double tau_va = 0.05;
    double eval_frac = 0.2;  // held-out share for best-checkpoint probes

    void validate() const;
};

struct CarlConfig {
    EncoderConfig encoder;
    TrainConfig train;
    PTDConfig ptd;
};

struct TrainState {
    CarlConfig cfg;
    EncoderParams online;
    EncoderParams target;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
    std::size_t adam_t = 0;  // completed optimizer steps
    std::size_t step = 0;    // k
    std::size_t total_steps = 1;
    std::size_t epoch = 0;       // resume cursor
    std::size_t batch_index = 0;  // resume cursor within epoch
    MomentumState momentum;
    Rng rng;
    double best_metric = -2.0;
    std::size_t best_step = 0;
};

struct StepReport {
    double l_mccl = 0.0;
    double l_ptd = 0.0;
    double l_total = 0.0;
    double m_used = 0.0;
    double lr_used = 0.0;
    std::size_t n_perturbed = 0;
};

struct MetricsRow {
    std::size_t step;
    double l_mccl, l_ptd, l_total, lr, momentum;
    std::optional<double> eval_r_valence;
    std::optional<double> eval_r_arousal;
};

struct TrainResult {
    std::vector<MetricsRow> log;
    std::string best_checkpoint;   // serialized TrainState at the best probe step
    std::string final_checkpoint;  // serialized TrainState after the last step
    double best_metric = -2.0;
    std::size_t best_step = 0;
};

// L = lambda1 * l_mccl + lambda2 * l_ptd
TensorPtr total_loss(const TensorPtr& l_mccl, const TensorPtr& l_ptd, double lambda1,
                     double lambda2);
double lr_schedule(std::size_t k, std::size_t total_steps, const TrainConfig& cfg);

// AdamW (beta1=0.9, beta2=0.999, eps=1e-8, decoupled decay), online params only.
void optimizer_step(TrainState& state, double lr);

TrainState init_train_state(const CarlConfig& cfg, std::size_t total_steps);

StepReport train_step(TrainState& state, const TokenBatch& batch);

// The full step loss with the attack perturbation held fixed (the outer
// backward treats delta_e as a constant); exposed for gradient checking.
TensorPtr build_step_loss(const EncoderParams& online, const EncoderParams& target,
                          const CarlConfig& cfg, const TokenBatch& batch,
                          const std::vector<double>& delta_e,
                          const std::vector<double>& salient_mask, bool use_dropout, Rng& rng);

TrainResult run_training(const Corpus& corpus, const CarlConfig& cfg);
// Continues a loaded state over the same corpus (resume path).
TrainResult run_training(const Corpus& corpus, TrainState& state);

// Sentence embeddings for a corpus in record order, [n x d_model] row-major.
std::vector<double> embed_corpus(const EncoderParams& params, const EncoderConfig& cfg,
                                 const Corpus& corpus, std::size_t batch_size = 32);

// Checkpoint: magic "CARL" + u32 version (LE) + u64 manifest length + JSON
// manifest + raw little-endian f64 arrays in manifest order.
void save_checkpoint(const TrainState& state, std::ostream& out);
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(std::istream& in);
TrainState load_checkpoint(const std::string& path);

// Deterministic 80/20-style split helper shared by trainer and CLI.
void split_corpus(const Corpus& corpus, double eval_frac, std::uint64_t seed, Corpus& train,
                  Corpus& held_out);

}  // namespace carl
