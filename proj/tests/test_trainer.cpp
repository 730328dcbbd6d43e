#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "carl/errors.hpp"
#include "carl/trainer.hpp"

using namespace carl;

namespace {

CarlConfig tiny_cfg() {
    CarlConfig cfg;
    cfg.encoder.d_model = 16;
    cfg.encoder.n_layers = 1;
    cfg.encoder.n_heads = 2;
    cfg.encoder.d_ff = 16;
    cfg.encoder.max_len = 16;
    cfg.encoder.d_proj = 8;
    cfg.train.batch_size = 4;
    cfg.train.epochs = 1;
    cfg.train.eval_every = 1000;
    cfg.ptd.epsilon = 0.5;
    cfg.ptd.alpha = 0.25;
    return cfg;
}

Corpus tiny_corpus(std::size_t n_per_quadrant = 4) {
    return generate_synthetic(n_per_quadrant, 0.1, 5);
}

}  // namespace

TEST_CASE("total_loss: weighted combination") {
    auto a = make_scalar(1.0), b = make_scalar(0.5);
    CHECK(total_loss(a, b, 0.8, 0.2)->data[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(total_loss(a, b, 0.8, 0.0)->data[0] == doctest::Approx(0.8).epsilon(1e-15));
    auto x = make_scalar(1.25), y = make_scalar(-0.75);
    CHECK(total_loss(x, y, 1.0, 1.0)->data[0] == doctest::Approx(0.5).epsilon(1e-15));
    auto bad = make_scalar(std::nan(""));
    CHECK_THROWS_AS(total_loss(bad, b, 0.8, 0.2), NumericError);
}

TEST_CASE("lr_schedule: warmup and cosine decay") {
    TrainConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_frac = 0.10;
    cfg.restart_period = 0;
    const std::size_t K = 100;  // warmup = 10 steps
    CHECK(lr_schedule(0, K, cfg) == 0.0);
    CHECK(lr_schedule(10, K, cfg) == doctest::Approx(1e-3).epsilon(1e-15));
    // halfway through the single post-warmup cosine cycle
    CHECK(lr_schedule(55, K, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_schedule(100, K, cfg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lr_schedule: warm restarts reset the cycle") {
    TrainConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_frac = 0.10;
    cfg.restart_period = 20;
    const std::size_t K = 100;
    double just_before = lr_schedule(29, K, cfg);
    double at_restart = lr_schedule(30, K, cfg);  // 20 steps past warmup end
    CHECK(at_restart == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(just_before < 2e-4);
    CHECK(lr_schedule(40, K, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
}

TEST_CASE("optimizer_step: first-step magnitude, zero-grad freeze, decoupled decay") {
    CarlConfig cfg = tiny_cfg();
    auto st = init_train_state(cfg, 10);
    auto& theta = st.online.named.begin()->second;

    SUBCASE("first step matches the bias-corrected closed form") {
        std::fill(theta->data.begin(), theta->data.end(), 0.0);
        for (auto& [name, p] : st.online.named) p->zero_grad();
        theta->grad[0] = 1.0;
        st.cfg.train.weight_decay = 0.0;
        optimizer_step(st, 0.1);
        CHECK(theta->data[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
    }

    SUBCASE("zero grads and zero decay leave parameters unchanged") {
        st.cfg.train.weight_decay = 0.0;
        auto snapshot = theta->data;
        for (auto& [name, p] : st.online.named) p->zero_grad();
        for (int i = 0; i < 5; ++i) optimizer_step(st, 0.1);
        CHECK(theta->data == snapshot);
    }

    SUBCASE("decoupled decay shrinks by (1 - lr*wd) per step") {
        st.cfg.train.weight_decay = 0.01;
        std::fill(theta->data.begin(), theta->data.end(), 2.0);
        for (auto& [name, p] : st.online.named) p->zero_grad();
        optimizer_step(st, 0.1);
        CHECK(theta->data[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
    }

    SUBCASE("non-finite grad names the parameter") {
        for (auto& [name, p] : st.online.named) p->zero_grad();
        theta->grad[0] = std::nan("");
        try {
            optimizer_step(st, 0.1);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find(st.online.named.begin()->first) !=
                  std::string::npos);
        }
    }
}

TEST_CASE("train_step: finite losses, exact combination, EMA contract") {
    auto cfg = tiny_cfg();
    auto corpus = tiny_corpus();
    auto batches = make_batches(corpus, 4, cfg.train.seed, cfg.encoder.max_len);
    auto st = init_train_state(cfg, 4);

    std::map<std::string, std::vector<double>> target_snapshot;
    for (auto& [name, p] : st.target.named) target_snapshot[name] = p->data;

    auto rep = train_step(st, batches[0]);
    CHECK(std::isfinite(rep.l_mccl));
    CHECK(std::isfinite(rep.l_ptd));
    CHECK(rep.l_total ==
          doctest::Approx(0.8 * rep.l_mccl + 0.2 * rep.l_ptd).epsilon(1e-12));
    CHECK(rep.n_perturbed > 0);

    // theta_t == m*theta_t_before + (1-m)*theta_o_after, element-wise
    for (auto& [name, p] : st.target.named) {
        auto& before = target_snapshot[name];
        auto& online = st.online.at(name)->data;
        for (std::size_t i = 0; i < p->data.size(); ++i)
            CHECK(p->data[i] ==
                  doctest::Approx(rep.m_used * before[i] + (1 - rep.m_used) * online[i])
                      .epsilon(1e-12));
    }
}

TEST_CASE("train_step: lambda2=0 degenerates to pure MCCL weighting") {
    auto cfg = tiny_cfg();
    cfg.train.lambda2 = 0.0;
    auto corpus = tiny_corpus();
    auto batches = make_batches(corpus, 4, cfg.train.seed, cfg.encoder.max_len);
    auto st = init_train_state(cfg, 4);
    auto rep = train_step(st, batches[0]);
    CHECK(rep.l_total == doctest::Approx(0.8 * rep.l_mccl).epsilon(1e-12));
}

TEST_CASE("train_step: losses stay finite over a 50-step smoke run") {
    auto cfg = tiny_cfg();
    cfg.train.epochs = 17;  // 3 train batches/epoch after the held-out split of 16 records
    auto corpus = tiny_corpus();
    auto result = run_training(corpus, cfg);
    CHECK(result.log.size() >= 50);
    for (auto& row : result.log) {
        CHECK(std::isfinite(row.l_mccl));
        CHECK(std::isfinite(row.l_ptd));
        CHECK(std::isfinite(row.l_total));
    }
}

TEST_CASE("full step loss gradient matches finite differences (attack held fixed)") {
    CarlConfig cfg;
    cfg.encoder.d_model = 8;
    cfg.encoder.n_layers = 1;
    cfg.encoder.n_heads = 2;
    cfg.encoder.d_ff = 8;
    cfg.encoder.max_len = 4;
    cfg.encoder.d_proj = 4;
    cfg.encoder.dropout_p = 0.0;
    cfg.ptd.pgd_steps = 1;
    cfg.ptd.epsilon = 0.5;
    cfg.ptd.alpha = 0.25;
    cfg.train.batch_size = 4;

    auto corpus = tiny_corpus(1);
    auto batches = make_batches(corpus, 4, 3, cfg.encoder.max_len);
    auto st = init_train_state(cfg, 1);
    const auto& batch = batches[0];

    // fixed perturbation and salient mask, as the outer backward sees them
    std::size_t n = batch.n, t = batch.t, d = cfg.encoder.d_model;
    std::vector<double> delta(n * t * d), sal_mask(n * t, 0.0);
    Rng noise(9);
    for (std::size_t i = 0; i < n; ++i) sal_mask[i * t + 1] = 1.0;
    for (auto& v : delta) v = noise.uniform(-0.1, 0.1);

    std::vector<TensorPtr> params;
    for (auto& [name, p] : st.online.named) params.push_back(p);
    auto build = [&] {
        Rng r(17);  // same masks every rebuild
        return build_step_loss(st.online, st.target, cfg, batch, delta, sal_mask, false, r);
    };
    CHECK(grad_check(build, params, 1e-5, 4, 23) < 1e-4);
}

TEST_CASE("run_training: deterministic and loss decreases") {
    auto cfg = tiny_cfg();
    cfg.train.epochs = 6;
    auto corpus = generate_synthetic(8, 0.1, 6);
    auto r1 = run_training(corpus, cfg);
    auto r2 = run_training(corpus, cfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].l_total == r2.log[i].l_total);  // bit-exact
        CHECK(r1.log[i].l_mccl == r2.log[i].l_mccl);
    }
    double first = r1.log.front().l_mccl, last = r1.log.back().l_mccl;
    CHECK(last < first);
}

TEST_CASE("checkpoint: round-trip of every array and scalar") {
    auto cfg = tiny_cfg();
    auto corpus = tiny_corpus();
    auto batches = make_batches(corpus, 4, cfg.train.seed, cfg.encoder.max_len);
    auto st = init_train_state(cfg, 8);
    train_step(st, batches[0]);
    train_step(st, batches[1]);

    std::stringstream buf;
    save_checkpoint(st, buf);
    auto back = load_checkpoint(buf);

    CHECK(back.step == st.step);
    CHECK(back.adam_t == st.adam_t);
    CHECK(back.total_steps == st.total_steps);
    CHECK(back.momentum.m_current == st.momentum.m_current);
    for (auto& [name, p] : st.online.named) CHECK(back.online.at(name)->data == p->data);
    for (auto& [name, p] : st.target.named) CHECK(back.target.at(name)->data == p->data);
    for (auto& [name, m] : st.adam_m) CHECK(back.adam_m.at(name) == m);
    for (auto& [name, v] : st.adam_v) CHECK(back.adam_v.at(name) == v);
}

TEST_CASE("checkpoint: wrong magic rejected") {
    std::stringstream buf;
    buf << "NOPE" << std::string(64, '\0');
    CHECK_THROWS_AS(load_checkpoint(buf), DataError);
}

TEST_CASE("checkpoint: truncated stream rejected") {
    auto cfg = tiny_cfg();
    auto st = init_train_state(cfg, 4);
    std::stringstream buf;
    save_checkpoint(st, buf);
    auto bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(cut), DataError);
}

TEST_CASE("checkpoint: resume reproduces the uninterrupted run bit-exactly") {
    auto cfg = tiny_cfg();
    cfg.train.epochs = 4;
    auto corpus = generate_synthetic(8, 0.1, 7);

    auto full = run_training(corpus, cfg);

    // interrupted run: same schedule horizon as the full run, but only 2 epochs
    Corpus train, held;
    split_corpus(corpus, cfg.train.eval_frac, cfg.train.seed, train, held);
    auto cfg_half = cfg;
    cfg_half.train.epochs = 2;
    auto st_half = init_train_state(cfg_half, full.log.size());
    auto half = run_training(corpus, st_half);

    std::stringstream buf(half.final_checkpoint);
    auto st = load_checkpoint(buf);
    st.cfg.train.epochs = 4;
    auto rest = run_training(corpus, st);

    REQUIRE(half.log.size() + rest.log.size() == full.log.size());
    for (std::size_t i = 0; i < half.log.size(); ++i)
        CHECK(half.log[i].l_total == full.log[i].l_total);
    for (std::size_t i = 0; i < rest.log.size(); ++i)
        CHECK(rest.log[i].l_total == full.log[half.log.size() + i].l_total);
}

TEST_CASE("target params never drift when m=1") {
    auto cfg = tiny_cfg();
    cfg.train.m_initial = 1.0;
    auto corpus = tiny_corpus();
    auto batches = make_batches(corpus, 4, cfg.train.seed, cfg.encoder.max_len);
    auto st = init_train_state(cfg, 100);  // schedule stays at 1.0 throughout
    std::map<std::string, std::vector<double>> snapshot;
    for (auto& [name, p] : st.target.named) snapshot[name] = p->data;
    train_step(st, batches[0]);
    train_step(st, batches[1]);
    for (auto& [name, p] : st.target.named) CHECK(p->data == snapshot[name]);
}
