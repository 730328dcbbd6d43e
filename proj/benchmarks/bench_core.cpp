// Microbenchmarks for the hot paths of a training step: tensor primitives,
// the encoder forward/backward, the similarity losses, the PGD attack, and a
// whole train_step at desk scale.

#include <benchmark/benchmark.h>

#include "carl/trainer.hpp"

using namespace carl;

namespace {

CarlConfig desk_cfg() {
    CarlConfig cfg;
    cfg.encoder.d_model = 64;
    cfg.encoder.n_layers = 2;
    cfg.encoder.n_heads = 4;
    cfg.encoder.d_ff = 128;
    cfg.encoder.max_len = 32;
    cfg.encoder.d_proj = 32;
    cfg.train.batch_size = 16;
    cfg.ptd.epsilon = 0.5;
    cfg.ptd.alpha = 0.25;
    return cfg;
}

TokenBatch first_batch(const CarlConfig& cfg, std::size_t n_per_quadrant = 4) {
    auto corpus = generate_synthetic(n_per_quadrant, 0.1, 11);
    return make_batches(corpus, cfg.train.batch_size, 11, cfg.encoder.max_len)[0];
}

}  // namespace

static void BM_MatmulBackward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    std::vector<double> ad(n * n), bd(n * n);
    for (auto& v : ad) v = rng.normal();
    for (auto& v : bd) v = rng.normal();
    auto a = make_tensor({n, n}, ad, true);
    auto b = make_tensor({n, n}, bd, true);
    for (auto _ : state) {
        a->zero_grad();
        b->zero_grad();
        auto loss = sum_all(matmul(a, b));
        backward(loss);
        benchmark::DoNotOptimize(a->grad.data());
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64)->Arg(128);

static void BM_SoftmaxRows(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    std::vector<double> xd(n * n);
    for (auto& v : xd) v = rng.uniform(-1, 1);
    auto x = make_tensor({n, n}, xd, false);
    for (auto _ : state) {
        auto p = softmax_rows(x, 0.05);
        benchmark::DoNotOptimize(p->data.data());
    }
}
BENCHMARK(BM_SoftmaxRows)->Arg(64)->Arg(256);

static void BM_EncoderForward(benchmark::State& state) {
    auto cfg = desk_cfg();
    auto batch = first_batch(cfg);
    Rng rng(3);
    auto params = init_params(cfg.encoder, rng, /*requires_grad=*/true);
    Rng fwd(4);
    for (auto _ : state) {
        auto enc = encode(params, cfg.encoder, batch, /*use_dropout=*/false, fwd);
        benchmark::DoNotOptimize(enc.sentence->data.data());
    }
}
BENCHMARK(BM_EncoderForward);

static void BM_MCCLForwardBackward(benchmark::State& state) {
    auto cfg = desk_cfg();
    auto batch = first_batch(cfg);
    Rng rng(5);
    auto online = init_params(cfg.encoder, rng, /*requires_grad=*/true);
    auto target = make_target_copy(online);
    Rng fwd(6);
    for (auto _ : state) {
        for (auto& [name, p] : online.named) p->zero_grad();
        auto enc_o = encode(online, cfg.encoder, batch, false, fwd);
        auto enc_t = encode(target, cfg.encoder, batch, false, fwd);
        auto q = predict(online, project(online, enc_o.sentence));
        auto z_t = project(target, enc_t.sentence);
        auto p_sim = to_distribution(embedding_similarity(q, z_t), cfg.train.tau_sim);
        auto p_va = to_distribution(label_similarity(batch.labels_va, batch.n), cfg.train.tau_va);
        auto loss = mccl_loss(p_sim, p_va);
        backward(loss);
        benchmark::DoNotOptimize(loss->data[0]);
    }
}
BENCHMARK(BM_MCCLForwardBackward);

static void BM_PGDAttack(benchmark::State& state) {
    auto cfg = desk_cfg();
    auto batch = first_batch(cfg);
    Rng rng(7);
    auto params = init_params(cfg.encoder, rng, /*requires_grad=*/true);
    Rng fwd(8);
    auto enc = encode(params, cfg.encoder, batch, false, fwd);
    const std::size_t d = cfg.encoder.d_model;

    SaliencyScores sal;
    sal.n = batch.n;
    sal.t = batch.t;
    sal.g.assign(batch.n * batch.t, 0.0);
    sal.mask = batch.attention_mask;
    Rng noise(9);
    for (std::size_t i = 0; i < sal.g.size(); ++i)
        if (batch.attention_mask[i] == 1.0 && i % batch.t != 0) sal.g[i] = noise.uniform(0, 1);
    auto salient = select_salient(sal, cfg.ptd.ratio);

    auto loss_fn = [&](const TensorPtr& e) {
        Rng r(10);
        auto enc_p = encode(params, cfg.encoder, batch, false, r, e);
        auto q = predict(params, project(params, enc_p.sentence));
        auto p_sim = to_distribution(embedding_similarity(q, detach(q)), cfg.train.tau_sim);
        auto p_va = to_distribution(label_similarity(batch.labels_va, batch.n), cfg.train.tau_va);
        return mccl_loss(p_sim, p_va);
    };
    for (auto _ : state) {
        auto delta = pgd_attack(enc.embeddings->data, batch.n, batch.t, d, salient, loss_fn,
                                cfg.ptd);
        benchmark::DoNotOptimize(delta.data());
    }
}
BENCHMARK(BM_PGDAttack);

static void BM_TrainStep(benchmark::State& state) {
    auto cfg = desk_cfg();
    auto batch = first_batch(cfg);
    auto st = init_train_state(cfg, 1000);
    for (auto _ : state) {
        auto rep = train_step(st, batch);
        benchmark::DoNotOptimize(rep.l_total);
    }
}
BENCHMARK(BM_TrainStep);
