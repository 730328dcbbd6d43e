#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "carl/encoder.hpp"
#include "carl/errors.hpp"
#include "carl/mccl.hpp"

using namespace carl;

namespace {

EncoderConfig small_cfg() {
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_len = 8;
    cfg.d_proj = 8;
    cfg.dropout_p = 0.1;
    return cfg;
}

TokenBatch small_batch(std::size_t n = 2, std::size_t t = 5) {
    TokenBatch b;
    b.n = n;
    b.t = t;
    b.token_ids.assign(n * t, kPadId);
    b.attention_mask.assign(n * t, 0.0);
    b.labels_va.assign(n * 2, 0.3);
    b.emotions.assign(n, "joy");
    for (std::size_t i = 0; i < n; ++i) {
        b.token_ids[i * t] = kClsId;
        b.attention_mask[i * t] = 1.0;
        for (std::size_t j = 1; j + 1 < t; ++j) {  // last position stays padded
            b.token_ids[i * t + j] = 65 + (i * t + j) % 26;
            b.attention_mask[i * t + j] = 1.0;
        }
    }
    return b;
}

}  // namespace

TEST_CASE("encode: output shapes") {
    auto cfg = small_cfg();
    Rng rng(1);
    auto params = init_params(cfg, rng);
    auto batch = small_batch(2, 5);
    Rng drop(2);
    auto out = encode(params, cfg, batch, false, drop);
    CHECK(out.hidden->shape == std::vector<std::size_t>{10, 16});
    CHECK(out.sentence->shape == std::vector<std::size_t>{2, 16});
    CHECK(out.embeddings->shape == std::vector<std::size_t>{10, 16});
}

TEST_CASE("encode: padded token ids cannot influence the sentence vector") {
    auto cfg = small_cfg();
    Rng rng(3);
    auto params = init_params(cfg, rng);
    auto batch = small_batch(2, 5);
    Rng d1(4), d2(4);
    auto a = encode(params, cfg, batch, false, d1);
    batch.token_ids[4] = 99;  // padded position of sentence 0
    auto b = encode(params, cfg, batch, false, d2);
    for (std::size_t i = 0; i < a.sentence->size(); ++i)
        CHECK(a.sentence->data[i] == doctest::Approx(b.sentence->data[i]).epsilon(1e-12));
}

TEST_CASE("encode: deterministic with and without dropout") {
    auto cfg = small_cfg();
    Rng rng(5);
    auto params = init_params(cfg, rng);
    auto batch = small_batch();
    {
        Rng r1(7), r2(7);
        auto a = encode(params, cfg, batch, false, r1);
        auto b = encode(params, cfg, batch, false, r2);
        CHECK(a.sentence->data == b.sentence->data);
    }
    {
        Rng r1(7), r2(7);
        auto a = encode(params, cfg, batch, true, r1);
        auto b = encode(params, cfg, batch, true, r2);
        CHECK(a.sentence->data == b.sentence->data);
    }
}

TEST_CASE("encode: out-of-vocab id rejected") {
    auto cfg = small_cfg();
    Rng rng(8);
    auto params = init_params(cfg, rng);
    auto batch = small_batch();
    batch.token_ids[1] = kVocabSize;
    Rng d(1);
    CHECK_THROWS_AS(encode(params, cfg, batch, false, d), DataError);
}

TEST_CASE("encode: override equal to natural embeddings is bit-identical") {
    auto cfg = small_cfg();
    Rng rng(9);
    auto params = init_params(cfg, rng);
    auto batch = small_batch();
    Rng d1(3), d2(3);
    auto base = encode(params, cfg, batch, false, d1);
    auto override_e = make_tensor(base.embeddings->shape, base.embeddings->data);
    auto again = encode(params, cfg, batch, false, d2, override_e);
    CHECK(base.sentence->data == again.sentence->data);
    CHECK(base.hidden->data == again.hidden->data);
}

TEST_CASE("encode: batch permutation equivariance") {
    auto cfg = small_cfg();
    Rng rng(10);
    auto params = init_params(cfg, rng);
    auto batch = small_batch(3, 5);
    // distinct contents per sentence
    for (std::size_t i = 0; i < 3; ++i) batch.token_ids[i * 5 + 1] = 70 + 3 * i;
    Rng d1(1);
    auto fwd = encode(params, cfg, batch, false, d1);

    TokenBatch swapped = batch;  // swap sentences 0 and 2
    for (std::size_t j = 0; j < 5; ++j) {
        std::swap(swapped.token_ids[j], swapped.token_ids[2 * 5 + j]);
        std::swap(swapped.attention_mask[j], swapped.attention_mask[2 * 5 + j]);
    }
    Rng d2(1);
    auto fwd2 = encode(params, cfg, swapped, false, d2);
    for (std::size_t c = 0; c < 16; ++c) {
        CHECK(fwd.sentence->data[c] == doctest::Approx(fwd2.sentence->data[2 * 16 + c]).epsilon(1e-12));
        CHECK(fwd.sentence->data[2 * 16 + c] == doctest::Approx(fwd2.sentence->data[c]).epsilon(1e-12));
    }
}

TEST_CASE("project/predict: shapes and zero-input bias path") {
    auto cfg = small_cfg();
    Rng rng(11);
    auto params = init_params(cfg, rng);
    // make biases nonzero so the bias path is visible
    for (auto& [name, p] : params.named)
        if (name.find(".b") != std::string::npos)
            for (auto& v : p->data) v = 0.25;

    auto zero_sentence = make_tensor({2, 16}, std::vector<double>(32, 0.0));
    auto z = project(params, zero_sentence);
    CHECK(z->shape == std::vector<std::size_t>{2, 8});
    CHECK(z->data[0] == doctest::Approx(z->data[8]).epsilon(1e-12));  // rows identical

    // hand-computed bias path: w1 contributes nothing at zero input
    auto b1 = params.at("proj.b1");
    auto w2 = params.at("proj.w2");
    auto b2 = params.at("proj.b2");
    std::vector<double> h(8);
    for (std::size_t j = 0; j < 8; ++j) {
        double x = b1->data[j];
        h[j] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));  // GELU
    }
    for (std::size_t j = 0; j < 8; ++j) {
        double want = b2->data[j];
        for (std::size_t k = 0; k < 8; ++k) want += h[k] * w2->data[k * 8 + j];
        CHECK(z->data[j] == doctest::Approx(want).epsilon(1e-10));
    }

    auto q = predict(params, z);
    CHECK(q->shape == std::vector<std::size_t>{2, 8});
}

TEST_CASE("project/predict: gradient checks") {
    auto cfg = small_cfg();
    Rng rng(12);
    auto params = init_params(cfg, rng);
    auto sentence = make_tensor({2, 16}, std::vector<double>(32), true);
    Rng noise(13);
    for (auto& v : sentence->data) v = noise.uniform(-1, 1);

    std::vector<TensorPtr> proj_params{params.at("proj.w1"), params.at("proj.b1"),
                                       params.at("proj.w2"), params.at("proj.b2"), sentence};
    CHECK(grad_check([&] { return mean_all(mul(project(params, sentence),
                                               project(params, sentence))); },
                     proj_params) < 1e-5);

    std::vector<TensorPtr> pred_params{params.at("pred.w1"), params.at("pred.b1"),
                                       params.at("pred.w2"), params.at("pred.b2")};
    auto z = make_tensor({2, 8}, std::vector<double>(16), false);
    for (auto& v : z->data) v = noise.uniform(-1, 1);
    CHECK(grad_check([&] { return mean_all(mul(predict(params, z), predict(params, z))); },
                     pred_params) < 1e-5);
}

TEST_CASE("detect_perturbed: zero weights give sigmoid(bias), range (0,1)") {
    auto cfg = small_cfg();
    Rng rng(14);
    auto params = init_params(cfg, rng);
    std::fill(params.at("detect.w")->data.begin(), params.at("detect.w")->data.end(), 0.0);
    params.at("detect.b")->data[0] = 0.4;

    auto hidden = make_tensor({6, 16}, std::vector<double>(96, 1.7));
    auto p = detect_perturbed(params, hidden);
    double want = 1.0 / (1.0 + std::exp(-0.4));
    for (std::size_t i = 0; i < 6; ++i) CHECK(p->data[i] == doctest::Approx(want).epsilon(1e-12));

    Rng noise(15);
    for (auto& v : params.at("detect.w")->data) v = noise.uniform(-3, 3);
    auto p2 = detect_perturbed(params, hidden);
    for (double v : p2->data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("target branch: shapes match, no pred/detect heads, zero grads after backward") {
    auto cfg = small_cfg();
    Rng rng(16);
    auto online = init_params(cfg, rng);
    auto target = make_target_copy(online);
    for (auto& [name, p] : target.named) {
        CHECK(is_target_param(name));
        CHECK(p->shape == online.at(name)->shape);
        CHECK_FALSE(p->requires_grad);
    }
    CHECK(target.named.count("pred.w1") == 0);
    CHECK(target.named.count("detect.w") == 0);

    auto batch = small_batch();
    Rng d1(1), d2(2);
    auto online_fwd = encode(online, cfg, batch, true, d1);
    auto target_fwd = encode(target, cfg, batch, false, d2);
    auto q = predict(online, project(online, online_fwd.sentence));
    auto z = project(target, target_fwd.sentence);
    auto sim = embedding_similarity(q, z);
    auto p_sim = to_distribution(sim, 0.05);
    auto p_va = to_distribution(label_similarity(batch.labels_va, batch.n), 0.05);
    backward(mccl_loss(p_sim, p_va));
    for (auto& [name, p] : target.named)
        for (double g : p->grad) CHECK(g == 0.0);
    bool online_learns = false;
    for (double g : online.at("embed.token")->grad) online_learns |= (g != 0.0);
    CHECK(online_learns);
}

TEST_CASE("EncoderConfig validation") {
    EncoderConfig bad = small_cfg();
    bad.d_model = 15;  // not divisible by n_heads
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small_cfg();
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(small_cfg().validate());
}
