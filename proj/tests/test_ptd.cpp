#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "carl/errors.hpp"
#include "carl/ptd.hpp"

using namespace carl;

namespace {

double frobenius(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("token_saliency: zero grads, 3-4-5 norm, mask zeroing") {
    // one sentence, 3 tokens (CLS + 2 real), d = 2
    std::vector<double> grads{9, 9, 3, 4, 0, 0};
    std::vector<double> mask{1, 1, 1};
    auto s = token_saliency(grads, 1, 3, 2, mask);
    CHECK(s.g[0] == 0.0);  // CLS forced to zero
    CHECK(s.g[1] == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(s.g[2] == 0.0);
}

TEST_CASE("token_saliency: padded positions forced to zero") {
    std::vector<double> grads{1, 1, 2, 2, 3, 3};
    std::vector<double> mask{1, 1, 0};
    auto s = token_saliency(grads, 1, 3, 2, mask);
    CHECK(s.g[2] == 0.0);
}

TEST_CASE("token_saliency: masked Frobenius identity") {
    Rng rng(41);
    std::size_t n = 3, t = 5, d = 4;
    std::vector<double> grads(n * t * d), mask(n * t, 1.0);
    for (auto& v : grads) v = rng.uniform(-2, 2);
    mask[4] = 0;
    mask[9] = 0;
    auto s = token_saliency(grads, n, t, d, mask);
    double sum_g2 = 0;
    for (double g : s.g) sum_g2 += g * g;
    double frob2 = 0;  // brute-force over masked non-CLS positions
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 1; j < t; ++j)
            if (mask[i * t + j] == 1.0)
                for (std::size_t c = 0; c < d; ++c) {
                    double v = grads[(i * t + j) * d + c];
                    frob2 += v * v;
                }
    CHECK(sum_g2 == doctest::Approx(frob2).epsilon(1e-12));
}

TEST_CASE("token_saliency: non-finite grads rejected") {
    std::vector<double> grads{0, 0, std::nan(""), 0};
    std::vector<double> mask{1, 1};
    CHECK_THROWS_AS(token_saliency(grads, 1, 2, 2, mask), NumericError);
}

TEST_CASE("select_salient: argmax, tie-break, paper ratio") {
    {
        SaliencyScores s{1, 5, {0, 0.1, 0.9, 0.5, 0.2}, {1, 1, 1, 1, 1}};
        auto set = select_salient(s, 0.25);  // k = floor(0.25*5) = 1
        REQUIRE(set.indices[0].size() == 1);
        CHECK(set.indices[0][0] == 2);
    }
    {
        SaliencyScores s{1, 3, {0, 0.5, 0.5}, {1, 1, 1}};
        auto set = select_salient(s, 0.25);  // k = max(1, floor(0.75)) = 1, earliest wins
        REQUIRE(set.indices[0].size() == 1);
        CHECK(set.indices[0][0] == 1);
    }
    {
        std::vector<double> g(21, 0.0), mask(21, 1.0);
        for (std::size_t j = 1; j <= 20; ++j) g[j] = 0.01 * double(j);
        SaliencyScores s{1, 21, g, mask};  // CLS + 20 real tokens
        auto set = select_salient(s, 0.10);
        CHECK(set.indices[0].size() == 2);
    }
}

TEST_CASE("select_salient: never CLS, never pads, mask consistent") {
    SaliencyScores s{2, 4, {0, 0.2, 0.9, 0, 0, 0.7, 0, 0}, {1, 1, 1, 0, 1, 1, 0, 0}};
    auto set = select_salient(s, 0.9);
    for (std::size_t i = 0; i < 2; ++i)
        for (auto j : set.indices[i]) {
            CHECK(j != 0);
            CHECK(s.mask[i * 4 + j] == 1.0);
        }
    std::size_t mask_count = 0;
    for (double m : set.mask) mask_count += (m == 1.0);
    CHECK(mask_count == set.total());
}

TEST_CASE("pgd_attack: zero gradient gives zero perturbation") {
    std::size_t n = 1, t = 3, d = 2;
    std::vector<double> e0(n * t * d, 0.5);
    SalientSet sal;
    sal.n = n;
    sal.t = t;
    sal.indices = {{1, 2}};
    sal.mask = {0, 1, 1};
    PTDConfig cfg;
    cfg.epsilon = 0.5;
    cfg.alpha = 0.25;
    auto loss_fn = [](const TensorPtr&) { return make_scalar(1.0); };  // constant loss
    auto delta = pgd_attack(e0, n, t, d, sal, loss_fn, cfg);
    for (double v : delta) CHECK(v == 0.0);
}

TEST_CASE("pgd_attack: hand-computed single step with projection") {
    // 1-D token at 0, loss = sum(e): gradient 1 everywhere, sign step alpha=0.1
    // projected onto the 0.05-ball
    std::size_t n = 1, t = 2, d = 1;
    std::vector<double> e0{0.0, 0.0};
    SalientSet sal;
    sal.n = n;
    sal.t = t;
    sal.indices = {{1}};
    sal.mask = {0, 1};
    PTDConfig cfg;
    cfg.pgd_steps = 1;
    cfg.alpha = 0.1;
    cfg.epsilon = 0.05;
    cfg.frobenius_cap = 1.0;  // inactive
    auto loss_fn = [](const TensorPtr& e) { return sum_all(e); };
    auto delta = pgd_attack(e0, n, t, d, sal, loss_fn, cfg);
    CHECK(delta[0] == 0.0);  // CLS untouched
    CHECK(delta[1] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("pgd_attack: projection contracts on random attacks") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2, t = 4, d = 3;
        std::vector<double> e0(n * t * d);
        for (auto& v : e0) v = rng.uniform(-1, 1);
        SalientSet sal;
        sal.n = n;
        sal.t = t;
        sal.indices = {{1, 3}, {2}};
        sal.mask = {0, 1, 0, 1, 0, 0, 1, 0};
        PTDConfig cfg;
        cfg.epsilon = 0.3;
        cfg.alpha = 0.5;
        cfg.frobenius_cap = 0.4;
        std::vector<double> w(n * t * d);
        for (auto& v : w) v = rng.uniform(-1, 1);
        auto weights = make_tensor({n * t, d}, w);
        auto loss_fn = [&](const TensorPtr& e) { return sum_all(mul(e, gelu(weights))); };
        auto e0_copy = e0;
        auto delta = pgd_attack(e0, n, t, d, sal, loss_fn, cfg);
        CHECK(e0 == e0_copy);  // never mutates the input
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                double norm2 = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    double v = delta[(i * t + j) * d + c];
                    norm2 += v * v;
                    if (sal.mask[i * t + j] == 0.0) CHECK(v == 0.0);
                }
                CHECK(std::sqrt(norm2) <= cfg.epsilon + 1e-12);
            }
        CHECK(frobenius(delta) <= cfg.frobenius_cap + 1e-12);
    }
}

TEST_CASE("pgd_attack: increases the loss on most seeds (smoke preset)") {
    Rng rng(43);
    std::size_t n = 2, t = 4, d = 6;
    int increased = 0;
    const int trials = 50;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<double> e0(n * t * d), w(d * d);
        for (auto& v : e0) v = rng.uniform(-1, 1);
        for (auto& v : w) v = rng.uniform(-1, 1);
        auto weights = make_tensor({d, d}, w);
        auto loss_fn = [&](const TensorPtr& e) {
            return mean_all(tanh_(matmul(e, weights)));
        };
        SalientSet sal;
        sal.n = n;
        sal.t = t;
        sal.indices = {{1, 2}, {1, 3}};
        sal.mask = {0, 1, 1, 0, 0, 1, 0, 1};
        PTDConfig cfg;
        cfg.epsilon = 0.5;
        cfg.alpha = 0.25;
        auto delta = pgd_attack(e0, n, t, d, sal, loss_fn, cfg);
        auto perturbed = apply_perturbation(e0, delta, sal.mask, d);
        double before = loss_fn(make_tensor({n * t, d}, e0))->data[0];
        double after = loss_fn(make_tensor({n * t, d}, perturbed))->data[0];
        increased += (after >= before);
    }
    CHECK(increased >= trials * 9 / 10);
}

TEST_CASE("apply_perturbation: empty set, full mask, locality") {
    std::vector<double> e{1, 2, 3, 4, 5, 6};
    std::vector<double> delta{10, 10, 10, 10, 10, 10};
    {
        auto out = apply_perturbation(e, delta, {0, 0, 0}, 2);
        CHECK(out == e);
    }
    {
        auto out = apply_perturbation(e, delta, {1, 1, 1}, 2);
        for (std::size_t i = 0; i < 6; ++i) CHECK(out[i] == e[i] + delta[i]);
    }
    {
        auto out = apply_perturbation(e, delta, {0, 1, 0}, 2);
        CHECK(out[0] == e[0]);
        CHECK(out[1] == e[1]);
        CHECK(out[2] == e[2] + 10);
        CHECK(out[3] == e[3] + 10);
        CHECK(out[4] == e[4]);
        CHECK(out[5] == e[5]);
    }
}

TEST_CASE("focal_loss: perfect prediction contributes zero") {
    auto p = make_tensor({2, 1}, std::vector<double>{1.0 - 1e-15, 1e-15});
    auto loss = focal_loss(p, {1, 0}, {1, 1}, 2.0);
    CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("focal_loss: gamma=0 reduces to cross-entropy; hand value at 0.9") {
    auto p = make_tensor({1, 1}, std::vector<double>{0.5});
    auto l0 = focal_loss(p, {1}, {1}, 0.0);
    CHECK(l0->data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    auto p9 = make_tensor({1, 1}, std::vector<double>{0.9});
    auto l2 = focal_loss(p9, {1}, {1}, 2.0);
    CHECK(l2->data[0] == doctest::Approx(-0.01 * std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("focal_loss: gamma=0 equals masked mean BCE (brute force)") {
    Rng rng(44);
    std::size_t n = 3, t = 4;
    std::vector<double> pv(n * t), pert(n * t), valid(n * t);
    for (std::size_t i = 0; i < n * t; ++i) {
        pv[i] = rng.uniform(0.05, 0.95);
        pert[i] = rng.uniform_int(2);
        valid[i] = (i % t == 0) ? 0.0 : double(rng.uniform_int(2));  // CLS marked invalid
    }
    valid[1] = 1;  // keep at least one valid position
    auto p = make_tensor({n * t, 1}, pv);
    double loss = focal_loss(p, pert, valid, 0.0)->data[0];
    double bce = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n * t; ++i) {
        if (valid[i] == 0.0) continue;
        double pt = pert[i] == 1.0 ? pv[i] : 1.0 - pv[i];
        bce -= std::log(pt);
        ++count;
    }
    CHECK(loss == doctest::Approx(bce / double(count)).epsilon(1e-12));
}

TEST_CASE("focal_loss: monotone decreasing in p_t") {
    double prev = 1e18;
    for (double pt = 0.05; pt < 1.0; pt += 0.05) {
        auto p = make_tensor({1, 1}, std::vector<double>{pt});
        double l = focal_loss(p, {1}, {1}, 2.0)->data[0];
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("focal_loss: p outside (0,1) rejected") {
    auto bad = make_tensor({1, 1}, std::vector<double>{1.5});
    CHECK_THROWS_AS(focal_loss(bad, {1}, {1}, 2.0), ContractError);
    auto zero = make_tensor({1, 1}, std::vector<double>{0.0});
    CHECK_THROWS_AS(focal_loss(zero, {1}, {1}, 2.0), ContractError);
}

TEST_CASE("PTDConfig validation") {
    PTDConfig bad;
    bad.ratio = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PTDConfig{};
    bad.epsilon = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PTDConfig{};
    bad.gamma = -0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    PTDConfig good;
    CHECK_NOTHROW(good.validate());
}
