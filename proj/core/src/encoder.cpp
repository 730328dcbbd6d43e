#include "carl/encoder.hpp"

#include <cmath>
#include <cstdlib>

#include "carl/errors.hpp"

namespace carl {

void EncoderConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_len < 2 || d_proj == 0)
        throw ConfigError("EncoderConfig: all sizes must be >= 1 (max_len >= 2)");
    if (d_model % n_heads != 0)
        throw ConfigError("EncoderConfig: d_model (" + std::to_string(d_model) +
                          ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw ConfigError("EncoderConfig: dropout_p must be in [0,1)");
}

const TensorPtr& EncoderParams::at(const std::string& name) const {
    auto it = named.find(name);
    if (it == named.end()) throw ContractError("EncoderParams: unknown parameter " + name);
    return it->second;
}

std::vector<TensorPtr> EncoderParams::all() const {
    std::vector<TensorPtr> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

void EncoderParams::zero_grad() {
    for (auto& [name, t] : named) t->zero_grad();
}

namespace {

// Fan-in scaling everywhere. A fixed small scale (the usual large-transformer
// 0.02) collapses activations through the stacked pooler -> projection ->
// prediction MLPs at this size, pinning cosine similarity at its norm floor
// where gradients of the similarity loss blow up.
TensorPtr init_weight(std::vector<std::size_t> shape, Rng& rng, bool requires_grad) {
    static const double factor = [] {
        const char* s = std::getenv("CARL_INIT_SCALE");
        return s ? std::atof(s) : 1.0;
    }();
    static const double emb_scale = [] {
        const char* s = std::getenv("CARL_EMB_SCALE");
        return s ? std::atof(s) : 0.0;
    }();
    double scale = shape.size() == 2 && shape[0] > 1
                       ? factor / std::sqrt(static_cast<double>(shape[0]))
                       : 0.02;
    if (emb_scale > 0.0 && shape.size() == 2 && shape[0] > 200) scale = emb_scale;
    auto t = make_tensor(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.normal() * scale;
    return t;
}

TensorPtr init_const(std::vector<std::size_t> shape, double value, bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr mlp2(const EncoderParams& p, const std::string& prefix, const TensorPtr& x) {
    auto h = add_row_broadcast(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1"));
    return add_row_broadcast(matmul(gelu(h), p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

}  // namespace

EncoderParams init_params(const EncoderConfig& cfg, Rng& rng, bool requires_grad) {
    cfg.validate();
    EncoderParams p;
    auto& m = p.named;
    const std::size_t d = cfg.d_model;
    m["embed.token"] = init_weight({cfg.vocab_size, d}, rng, requires_grad);
    m["embed.pos"] = init_weight({cfg.max_len, d}, rng, requires_grad);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = "layer" + std::to_string(l);
        m[lp + ".ln1.g"] = init_const({d}, 1.0, requires_grad);
        m[lp + ".ln1.b"] = init_const({d}, 0.0, requires_grad);
        for (const char* nm : {"wq", "wk", "wv", "wo"})
            m[lp + ".attn." + nm] = init_weight({d, d}, rng, requires_grad);
        for (const char* nm : {"bq", "bk", "bv", "bo"})
            m[lp + ".attn." + nm] = init_const({d}, 0.0, requires_grad);
        m[lp + ".ln2.g"] = init_const({d}, 1.0, requires_grad);
        m[lp + ".ln2.b"] = init_const({d}, 0.0, requires_grad);
        m[lp + ".ff.w1"] = init_weight({d, cfg.d_ff}, rng, requires_grad);
        m[lp + ".ff.b1"] = init_const({cfg.d_ff}, 0.0, requires_grad);
        m[lp + ".ff.w2"] = init_weight({cfg.d_ff, d}, rng, requires_grad);
        m[lp + ".ff.b2"] = init_const({d}, 0.0, requires_grad);
    }
    m["final_ln.g"] = init_const({d}, 1.0, requires_grad);
    m["final_ln.b"] = init_const({d}, 0.0, requires_grad);
    m["pooler.w"] = init_weight({d, d}, rng, requires_grad);
    m["proj.w1"] = init_weight({d, cfg.d_proj}, rng, requires_grad);
    m["proj.b1"] = init_const({cfg.d_proj}, 0.0, requires_grad);
    m["proj.w2"] = init_weight({cfg.d_proj, cfg.d_proj}, rng, requires_grad);
    m["proj.b2"] = init_const({cfg.d_proj}, 0.0, requires_grad);
    m["pred.w1"] = init_weight({cfg.d_proj, cfg.d_proj}, rng, requires_grad);
    m["pred.b1"] = init_const({cfg.d_proj}, 0.0, requires_grad);
    m["pred.w2"] = init_weight({cfg.d_proj, cfg.d_proj}, rng, requires_grad);
    m["pred.b2"] = init_const({cfg.d_proj}, 0.0, requires_grad);
    m["detect.w"] = init_weight({d, 1}, rng, requires_grad);
    m["detect.b"] = init_const({1}, 0.0, requires_grad);
    return p;
}

bool is_target_param(const std::string& name) {
    return name.rfind("pred.", 0) != 0 && name.rfind("detect.", 0) != 0;
}

EncoderParams make_target_copy(const EncoderParams& online) {
    EncoderParams target;
    for (const auto& [name, t] : online.named) {
        if (!is_target_param(name)) continue;
        target.named[name] = detach(t);
    }
    return target;
}

EncodeResult encode(const EncoderParams& params, const EncoderConfig& cfg,
                    const TokenBatch& batch, bool use_dropout, Rng& rng,
                    const TensorPtr& override_embeddings) {
    const std::size_t n = batch.n, t = batch.t, d = cfg.d_model;
    if (t > cfg.max_len)
        throw DataError("encode: batch length " + std::to_string(t) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
    for (auto id : batch.token_ids)
        if (id >= cfg.vocab_size)
            throw DataError("encode: token id " + std::to_string(id) + " >= vocab_size " +
                            std::to_string(cfg.vocab_size));

    TensorPtr embeddings;
    if (override_embeddings) {
        if (override_embeddings->rows() != n * t || override_embeddings->cols() != d)
            throw ContractError("encode: override embeddings " + shape_str(*override_embeddings) +
                                " != [" + std::to_string(n * t) + "x" + std::to_string(d) + "]");
        embeddings = override_embeddings;
    } else {
        std::vector<std::size_t> pos_ids(n * t);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < t; ++j) pos_ids[i * t + j] = j;
        embeddings = add(gather_rows(params.at("embed.token"), batch.token_ids),
                         gather_rows(params.at("embed.pos"), pos_ids));
    }

    // additive attention mask bias per sample: -1e9 on padded key columns
    std::vector<TensorPtr> mask_bias(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto b = make_tensor({t, t});
        for (std::size_t q = 0; q < t; ++q)
            for (std::size_t k = 0; k < t; ++k)
                b->data[q * t + k] = batch.mask_at(i, k) > 0.5 ? 0.0 : -1e9;
        mask_bias[i] = b;
    }

    const std::size_t n_heads = cfg.n_heads;
    const std::size_t dh = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double p_drop = use_dropout ? cfg.dropout_p : 0.0;

    TensorPtr x = embeddings;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = "layer" + std::to_string(l);
        auto h = layer_norm(x, params.at(lp + ".ln1.g"), params.at(lp + ".ln1.b"));
        auto q_all = add_row_broadcast(matmul(h, params.at(lp + ".attn.wq")),
                                       params.at(lp + ".attn.bq"));
        auto k_all = add_row_broadcast(matmul(h, params.at(lp + ".attn.wk")),
                                       params.at(lp + ".attn.bk"));
        auto v_all = add_row_broadcast(matmul(h, params.at(lp + ".attn.wv")),
                                       params.at(lp + ".attn.bv"));
        std::vector<TensorPtr> per_sample(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto qi = slice_rows(q_all, i * t, t);
            auto ki = slice_rows(k_all, i * t, t);
            auto vi = slice_rows(v_all, i * t, t);
            std::vector<TensorPtr> heads(n_heads);
            for (std::size_t hd = 0; hd < n_heads; ++hd) {
                auto qh = slice_cols(qi, hd * dh, dh);
                auto kh = slice_cols(ki, hd * dh, dh);
                auto vh = slice_cols(vi, hd * dh, dh);
                auto scores = add(mul_scalar(matmul(qh, transpose(kh)), att_scale), mask_bias[i]);
                heads[hd] = matmul(softmax_rows(scores), vh);
            }
            per_sample[i] = concat_cols(heads);
        }
        auto att = add_row_broadcast(matmul(concat_rows(per_sample), params.at(lp + ".attn.wo")),
                                     params.at(lp + ".attn.bo"));
        if (p_drop > 0.0) att = dropout(att, p_drop, rng);
        x = add(x, att);

        auto h2 = layer_norm(x, params.at(lp + ".ln2.g"), params.at(lp + ".ln2.b"));
        auto ff = mlp2(params, lp + ".ff", h2);
        if (p_drop > 0.0) ff = dropout(ff, p_drop, rng);
        x = add(x, ff);
    }
    auto hidden = layer_norm(x, params.at("final_ln.g"), params.at("final_ln.b"));

    std::vector<std::size_t> cls_rows(n);
    for (std::size_t i = 0; i < n; ++i) cls_rows[i] = i * t;
    auto sentence = matmul(gather_rows(hidden, cls_rows), params.at("pooler.w"));

    return {embeddings, hidden, sentence};
}

TensorPtr project(const EncoderParams& params, const TensorPtr& sentence) {
    return mlp2(params, "proj", sentence);
}

TensorPtr predict(const EncoderParams& params, const TensorPtr& z) {
    return mlp2(params, "pred", z);
}

TensorPtr detect_perturbed(const EncoderParams& params, const TensorPtr& hidden) {
    return sigmoid(add_row_broadcast(matmul(hidden, params.at("detect.w")), params.at("detect.b")));
}

}  // namespace carl
