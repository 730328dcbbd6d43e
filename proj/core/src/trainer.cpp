#include "carl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "carl/errors.hpp"
#include "carl/eval.hpp"
#include "carl/json_io.hpp"

namespace carl {

void TrainConfig::validate() const {
    if (lambda1 + lambda2 <= 0.0) throw ConfigError("TrainConfig: lambda1+lambda2 must be > 0");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0)
        throw ConfigError("TrainConfig: warmup_frac must be in [0,1)");
    if (lr_peak <= 0.0) throw ConfigError("TrainConfig: lr_peak must be > 0");
    if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
    if (epochs == 0) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (m_initial < 0.0 || m_initial > 1.0)
        throw ConfigError("TrainConfig: m_initial must be in [0,1]");
    if (tau_sim <= 0.0 || tau_va <= 0.0)
        throw ConfigError("TrainConfig: temperatures must be > 0");
    if (eval_frac < 0.0 || eval_frac >= 1.0)
        throw ConfigError("TrainConfig: eval_frac must be in [0,1)");
}

TensorPtr total_loss(const TensorPtr& l_mccl, const TensorPtr& l_ptd, double lambda1,
                     double lambda2) {
    if (!std::isfinite(l_mccl->data[0]) || !std::isfinite(l_ptd->data[0]))
        throw NumericError("total_loss: non-finite loss component (mccl=" +
                           std::to_string(l_mccl->data[0]) + ", ptd=" +
                           std::to_string(l_ptd->data[0]) + ")");
    return add(mul_scalar(l_mccl, lambda1), mul_scalar(l_ptd, lambda2));
}

double lr_schedule(std::size_t k, std::size_t total_steps, const TrainConfig& cfg) {
    const std::size_t warmup =
        static_cast<std::size_t>(std::floor(cfg.warmup_frac * static_cast<double>(total_steps)));
    if (warmup > 0 && k < warmup)
        return cfg.lr_peak * static_cast<double>(k) / static_cast<double>(warmup);
    const std::size_t period =
        cfg.restart_period > 0 ? cfg.restart_period : std::max<std::size_t>(total_steps - warmup, 1);
    // With warm restarts the cycle position wraps; a single cycle instead
    // saturates at the floor so the schedule does not jump back to the peak
    // on the final step.
    const std::size_t pos =
        cfg.restart_period > 0 ? (k - warmup) % period : std::min(k - warmup, period);
    const double tau = static_cast<double>(pos) / static_cast<double>(period);
    return cfg.lr_peak * (std::cos(3.14159265358979323846 * tau) + 1.0) / 2.0;
}

TrainState init_train_state(const CarlConfig& cfg, std::size_t total_steps) {
    cfg.encoder.validate();
    cfg.train.validate();
    cfg.ptd.validate();
    TrainState st;
    st.cfg = cfg;
    st.rng = Rng(cfg.train.seed);
    st.online = init_params(cfg.encoder, st.rng, /*requires_grad=*/true);
    st.target = make_target_copy(st.online);
    for (const auto& [name, t] : st.online.named) {
        st.adam_m[name].assign(t->size(), 0.0);
        st.adam_v[name].assign(t->size(), 0.0);
    }
    st.total_steps = std::max<std::size_t>(total_steps, 1);
    st.momentum = {cfg.train.m_initial, 0, st.total_steps, cfg.train.m_initial};
    return st;
}

void optimizer_step(TrainState& state, double lr) {
    if (lr < 0.0) throw ContractError("optimizer_step: lr must be >= 0");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const std::size_t t = ++state.adam_t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const double wd = state.cfg.train.weight_decay;
    for (auto& [name, p] : state.online.named) {
        auto& m = state.adam_m[name];
        auto& v = state.adam_v[name];
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double g = p->grad[i];
            if (!std::isfinite(g))
                throw NumericError("optimizer_step: non-finite gradient in " + name);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->data[i] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * p->data[i];
        }
    }
}

namespace {

TensorPtr mccl_from_encode(const EncoderParams& online, const CarlConfig& cfg,
                           const TokenBatch& batch, const EncodeResult& enc_online,
                           const TensorPtr& z_target) {
    auto q = predict(online, project(online, enc_online.sentence));
    auto p_sim = to_distribution(embedding_similarity(q, z_target), cfg.train.tau_sim);
    auto p_va =
        to_distribution(label_similarity(batch.labels_va, batch.n), cfg.train.tau_va);
    return mccl_loss(p_sim, p_va);
}

std::vector<double> detection_valid_mask(const TokenBatch& batch) {
    std::vector<double> valid = batch.attention_mask;
    for (std::size_t i = 0; i < batch.n; ++i) valid[i * batch.t] = 0.0;  // CLS excluded
    return valid;
}

}  // namespace

TensorPtr build_step_loss(const EncoderParams& online, const EncoderParams& target,
                          const CarlConfig& cfg, const TokenBatch& batch,
                          const std::vector<double>& delta_e,
                          const std::vector<double>& salient_mask, bool use_dropout, Rng& rng) {
    const std::size_t d = cfg.encoder.d_model;
    auto enc_o = encode(online, cfg.encoder, batch, use_dropout, rng);
    auto enc_t = encode(target, cfg.encoder, batch, /*use_dropout=*/false, rng);
    auto z_t = project(target, enc_t.sentence);
    auto l_mccl = mccl_from_encode(online, cfg, batch, enc_o, z_t);

    auto e_tilde = apply_perturbation(enc_o.embeddings, delta_e, salient_mask, d);
    auto enc_p = encode(online, cfg.encoder, batch, use_dropout, rng, e_tilde);
    auto p_det = detect_perturbed(online, enc_p.hidden);
    auto l_ptd = focal_loss(p_det, salient_mask, detection_valid_mask(batch), cfg.ptd.gamma);

    return total_loss(l_mccl, l_ptd, cfg.train.lambda1, cfg.train.lambda2);
}

StepReport train_step(TrainState& st, const TokenBatch& batch) {
    if (batch.n < 2) throw ContractError("train_step: batch size must be >= 2");
    const CarlConfig& cfg = st.cfg;
    const std::size_t n = batch.n, t = batch.t, d = cfg.encoder.d_model;
    st.online.zero_grad();

    // (1)-(2) clean forwards and MCCL loss
    auto enc_o = encode(st.online, cfg.encoder, batch, /*use_dropout=*/true, st.rng);
    auto enc_t = encode(st.target, cfg.encoder, batch, /*use_dropout=*/false, st.rng);
    auto z_t = project(st.target, enc_t.sentence);
    auto l_mccl = mccl_from_encode(st.online, cfg, batch, enc_o, z_t);
    if (!std::isfinite(l_mccl->data[0]))
        throw NumericError("train_step: non-finite MCCL loss at step " + std::to_string(st.step));

    // (3) capture embedding gradients for saliency
    backward(l_mccl);
    auto saliency = token_saliency(enc_o.embeddings->grad, n, t, d, batch.attention_mask);
    auto salient = select_salient(saliency, cfg.ptd.ratio);

    // (4) attack against the contrastive objective (no dropout inside the
    // inner loop; the target projections stay fixed)
    auto loss_fn = [&](const TensorPtr& e_node) {
        auto enc = encode(st.online, cfg.encoder, batch, /*use_dropout=*/false, st.rng, e_node);
        return mccl_from_encode(st.online, cfg, batch, enc, z_t);
    };
    std::vector<double> delta_e;
    try {
        delta_e = pgd_attack(enc_o.embeddings->data, n, t, d, salient, loss_fn, cfg.ptd);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (step " + std::to_string(st.step) + ")");
    }

    // (5) perturbed forward + detection loss; delta_e enters as a constant
    st.online.zero_grad();
    zero_graph(l_mccl);
    auto e_tilde = apply_perturbation(enc_o.embeddings, delta_e, salient.mask, d);
    auto enc_p = encode(st.online, cfg.encoder, batch, /*use_dropout=*/true, st.rng, e_tilde);
    auto p_det = detect_perturbed(st.online, enc_p.hidden);
    auto l_ptd = focal_loss(p_det, salient.mask, detection_valid_mask(batch), cfg.ptd.gamma);

    // (6) total loss and optimizer update
    auto l_tot = total_loss(l_mccl, l_ptd, cfg.train.lambda1, cfg.train.lambda2);
    backward(l_tot);
    const double lr = lr_schedule(st.step, st.total_steps, cfg.train);
    optimizer_step(st, lr);

    // (7) momentum schedule + EMA target update
    const double m = momentum_schedule(st.step, st.total_steps, cfg.train.m_initial);
    st.momentum.k = st.step;
    st.momentum.m_current = m;
    ema_update(st.target, st.online, m);

    // (8)
    ++st.step;

    StepReport rep;
    rep.l_mccl = l_mccl->data[0];
    rep.l_ptd = l_ptd->data[0];
    rep.l_total = l_tot->data[0];
    rep.m_used = m;
    rep.lr_used = lr;
    rep.n_perturbed = salient.total();
    return rep;
}

std::vector<double> embed_corpus(const EncoderParams& params, const EncoderConfig& cfg,
                                 const Corpus& corpus, std::size_t batch_size) {
    Rng unused(0);
    std::vector<double> out;
    out.reserve(corpus.size() * cfg.d_model);
    for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, corpus.size() - start);
        std::size_t t = 0;
        std::vector<std::pair<std::vector<std::size_t>, std::vector<double>>> toks(n);
        for (std::size_t i = 0; i < n; ++i) {
            toks[i] = tokenize(corpus.records[start + i].text, cfg.max_len);
            std::size_t len = 0;
            for (double mv : toks[i].second) len += mv > 0.5 ? 1 : 0;
            t = std::max(t, len);
        }
        TokenBatch batch;
        batch.n = n;
        batch.t = t;
        batch.token_ids.assign(n * t, kPadId);
        batch.attention_mask.assign(n * t, 0.0);
        batch.labels_va.assign(n * 2, 0.0);
        batch.emotions.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < t; ++j) {
                batch.token_ids[i * t + j] = toks[i].first[j];
                batch.attention_mask[i * t + j] = toks[i].second[j];
            }
        auto enc = encode(params, cfg, batch, /*use_dropout=*/false, unused);
        out.insert(out.end(), enc.sentence->data.begin(), enc.sentence->data.end());
    }
    return out;
}

void split_corpus(const Corpus& corpus, double eval_frac, std::uint64_t seed, Corpus& train,
                  Corpus& held_out) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed ^ 0xA5A5A5A55A5A5A5AULL);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
    const std::size_t n_eval =
        static_cast<std::size_t>(std::floor(eval_frac * static_cast<double>(corpus.size())));
    std::vector<std::size_t> eval_idx(order.begin(), order.begin() + n_eval);
    std::vector<std::size_t> train_idx(order.begin() + n_eval, order.end());
    std::sort(eval_idx.begin(), eval_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    train.records.clear();
    held_out.records.clear();
    train.source_scale = held_out.source_scale = corpus.source_scale;
    for (auto i : train_idx) train.records.push_back(corpus.records[i]);
    for (auto i : eval_idx) held_out.records.push_back(corpus.records[i]);
}

namespace {

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t epoch) {
    return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1));
}

// mean held-out Pearson r over the valence and arousal probes
std::pair<double, double> probe_pair(const TrainState& st, const Corpus& held) {
    const auto emb = embed_corpus(st.online, st.cfg.encoder, held);
    std::vector<double> valence(held.size()), arousal(held.size());
    for (std::size_t i = 0; i < held.size(); ++i) {
        valence[i] = held.records[i].valence;
        arousal[i] = held.records[i].arousal;
    }
    const auto rv = regression_probe(emb, held.size(), st.cfg.encoder.d_model, valence,
                                     st.cfg.train.seed);
    const auto ra = regression_probe(emb, held.size(), st.cfg.encoder.d_model, arousal,
                                     st.cfg.train.seed);
    return {rv.pearson_r, ra.pearson_r};
}

TrainResult run_loop(const Corpus& train, const Corpus& held, TrainState& st) {
    const TrainConfig& tc = st.cfg.train;
    TrainResult result;
    result.best_metric = st.best_metric;
    result.best_step = st.best_step;
    for (std::size_t epoch = st.epoch; epoch < tc.epochs; ++epoch) {
        auto batches = make_batches(train, tc.batch_size, epoch_shuffle_seed(tc.seed, epoch),
                                    st.cfg.encoder.max_len);
        const std::size_t start_bi = epoch == st.epoch ? st.batch_index : 0;
        for (std::size_t bi = start_bi; bi < batches.size(); ++bi) {
            st.epoch = epoch;
            st.batch_index = bi;
            const auto rep = train_step(st, batches[bi]);
            st.batch_index = bi + 1;
            MetricsRow row{st.step,    rep.l_mccl,   rep.l_ptd, rep.l_total,
                           rep.lr_used, rep.m_used,   {},        {}};
            const bool do_eval = held.size() >= 10 && tc.eval_every > 0 &&
                                 (st.step % tc.eval_every == 0 || st.step == st.total_steps);
            if (do_eval) {
                const auto [rv, ra] = probe_pair(st, held);
                row.eval_r_valence = rv;
                row.eval_r_arousal = ra;
                const double mean_r = 0.5 * (rv + ra);
                if (mean_r > st.best_metric) {
                    st.best_metric = mean_r;
                    st.best_step = st.step;
                    std::ostringstream buf(std::ios::binary);
                    save_checkpoint(st, buf);
                    result.best_checkpoint = buf.str();
                    result.best_metric = mean_r;
                    result.best_step = st.step;
                }
            }
            result.log.push_back(std::move(row));
        }
        st.epoch = epoch + 1;
        st.batch_index = 0;
    }
    return result;
}

}  // namespace

TrainResult run_training(const Corpus& corpus, const CarlConfig& cfg) {
    if (corpus.size() < 2) throw ContractError("run_training: corpus needs >= 2 records");
    Corpus train, held;
    split_corpus(corpus, cfg.train.eval_frac, cfg.train.seed, train, held);
    const auto probe_batches =
        make_batches(train, cfg.train.batch_size, epoch_shuffle_seed(cfg.train.seed, 0),
                     cfg.encoder.max_len);
    const std::size_t total = cfg.train.epochs * probe_batches.size();
    TrainState st = init_train_state(cfg, total);
    auto result = run_loop(train, held, st);
    std::ostringstream buf(std::ios::binary);
    save_checkpoint(st, buf);
    result.final_checkpoint = buf.str();
    if (result.best_checkpoint.empty()) {
        result.best_checkpoint = result.final_checkpoint;
        result.best_step = st.step;
    }
    return result;
}

TrainResult run_training(const Corpus& corpus, TrainState& state) {
    if (corpus.size() < 2) throw ContractError("run_training: corpus needs >= 2 records");
    Corpus train, held;
    split_corpus(corpus, state.cfg.train.eval_frac, state.cfg.train.seed, train, held);
    auto result = run_loop(train, held, state);
    std::ostringstream buf(std::ios::binary);
    save_checkpoint(state, buf);
    result.final_checkpoint = buf.str();
    if (result.best_checkpoint.empty()) {
        result.best_checkpoint = result.final_checkpoint;
        result.best_step = state.step;
    }
    return result;
}

// --- checkpoint I/O ---------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64_array(std::ostream& out, const std::vector<double>& v) {
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(out, bits);
    }
}

std::vector<double> read_f64_array(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(in);
        std::memcpy(&v[i], &bits, 8);
    }
    return v;
}

}  // namespace

void save_checkpoint(const TrainState& state, std::ostream& out) {
    nlohmann::json manifest;
    manifest["config"] = state.cfg;
    manifest["step"] = state.step;
    manifest["total_steps"] = state.total_steps;
    manifest["adam_t"] = state.adam_t;
    manifest["epoch"] = state.epoch;
    manifest["batch_index"] = state.batch_index;
    manifest["momentum"] = {{"m_initial", state.momentum.m_initial},
                            {"k", state.momentum.k},
                            {"total_steps", state.momentum.total_steps},
                            {"m_current", state.momentum.m_current}};
    const auto rng_state = state.rng.save_state();
    manifest["rng"] = {{"state", rng_state},
                       {"has_spare", state.rng.has_spare()},
                       {"spare", state.rng.spare()}};
    manifest["best_metric"] = state.best_metric;
    manifest["best_step"] = state.best_step;

    std::vector<std::pair<std::string, const std::vector<double>*>> arrays;
    nlohmann::json arrays_meta = nlohmann::json::array();
    auto push_tensor = [&](const std::string& name, const TensorPtr& t) {
        arrays_meta.push_back({{"name", name}, {"shape", t->shape}});
        arrays.emplace_back(name, &t->data);
    };
    for (const auto& [name, t] : state.online.named) push_tensor("online/" + name, t);
    for (const auto& [name, t] : state.target.named) push_tensor("target/" + name, t);
    for (const auto& [name, v] : state.adam_m) {
        arrays_meta.push_back({{"name", "adam_m/" + name}, {"shape", {v.size()}}});
        arrays.emplace_back("adam_m/" + name, &v);
    }
    for (const auto& [name, v] : state.adam_v) {
        arrays_meta.push_back({{"name", "adam_v/" + name}, {"shape", {v.size()}}});
        arrays.emplace_back("adam_v/" + name, &v);
    }
    manifest["arrays"] = std::move(arrays_meta);

    const std::string manifest_str = manifest.dump();
    out.write("CARL", 4);
    write_u32(out, kCheckpointVersion);
    write_u64(out, manifest_str.size());
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    for (const auto& [name, v] : arrays) write_f64_array(out, *v);
    if (!out) throw DataError("checkpoint: write failed");
}

void save_checkpoint(const TrainState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(state, out);
}

TrainState load_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CARL", 4) != 0)
        throw DataError("checkpoint: bad magic (not a CARL checkpoint)");
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t manifest_len = read_u64(in);
    std::string manifest_str(manifest_len, '\0');
    in.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
    if (!in) throw DataError("checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: manifest parse error: ") + e.what());
    }

    TrainState st;
    st.cfg = manifest.at("config").get<CarlConfig>();
    st.step = manifest.at("step").get<std::size_t>();
    st.total_steps = manifest.at("total_steps").get<std::size_t>();
    st.adam_t = manifest.at("adam_t").get<std::size_t>();
    st.epoch = manifest.at("epoch").get<std::size_t>();
    st.batch_index = manifest.at("batch_index").get<std::size_t>();
    const auto& mj = manifest.at("momentum");
    st.momentum = {mj.at("m_initial").get<double>(), mj.at("k").get<std::size_t>(),
                   mj.at("total_steps").get<std::size_t>(), mj.at("m_current").get<double>()};
    const auto& rj = manifest.at("rng");
    st.rng.restore_state(rj.at("state").get<std::array<std::uint64_t, 4>>(),
                         rj.at("has_spare").get<bool>(), rj.at("spare").get<double>());
    st.best_metric = manifest.at("best_metric").get<double>();
    st.best_step = manifest.at("best_step").get<std::size_t>();

    for (const auto& meta : manifest.at("arrays")) {
        const std::string name = meta.at("name").get<std::string>();
        const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        auto data = read_f64_array(in, n);
        if (name.rfind("online/", 0) == 0) {
            st.online.named[name.substr(7)] = make_tensor(shape, std::move(data), true);
        } else if (name.rfind("target/", 0) == 0) {
            st.target.named[name.substr(7)] = make_tensor(shape, std::move(data), false);
        } else if (name.rfind("adam_m/", 0) == 0) {
            st.adam_m[name.substr(7)] = std::move(data);
        } else if (name.rfind("adam_v/", 0) == 0) {
            st.adam_v[name.substr(7)] = std::move(data);
        } else {
            throw DataError("checkpoint: unknown array " + name);
        }
    }
    return st;
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    return load_checkpoint(in);
}

}  // namespace carl
