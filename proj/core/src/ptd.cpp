#include "carl/ptd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "carl/errors.hpp"

namespace carl {

std::size_t SalientSet::total() const {
    std::size_t c = 0;
    for (const auto& s : indices) c += s.size();
    return c;
}

void PTDConfig::validate() const {
    if (ratio <= 0.0 || ratio > 1.0) throw ConfigError("PTDConfig: ratio must be in (0,1]");
    if (alpha <= 0.0 || epsilon <= 0.0) throw ConfigError("PTDConfig: alpha, epsilon must be > 0");
    if (gamma < 0.0) throw ConfigError("PTDConfig: gamma must be >= 0");
}

SaliencyScores token_saliency(const std::vector<double>& embedding_grads, std::size_t n,
                              std::size_t t, std::size_t d, const std::vector<double>& mask) {
    if (embedding_grads.size() != n * t * d)
        throw ContractError("token_saliency: grads size mismatch");
    SaliencyScores out;
    out.n = n;
    out.t = t;
    out.g.assign(n * t, 0.0);
    out.mask = mask;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t tok = 1; tok < t; ++tok) {  // position 0 is CLS, stays 0
            if (mask[i * t + tok] < 0.5) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double v = embedding_grads[(i * t + tok) * d + j];
                if (!std::isfinite(v))
                    throw NumericError("token_saliency: non-finite gradient at sentence " +
                                       std::to_string(i) + " token " + std::to_string(tok));
                s += v * v;
            }
            out.g[i * t + tok] = std::sqrt(s);
        }
    }
    return out;
}

SalientSet select_salient(const SaliencyScores& g, double ratio) {
    if (ratio <= 0.0 || ratio > 1.0) throw ConfigError("select_salient: ratio must be in (0,1]");
    SalientSet out;
    out.n = g.n;
    out.t = g.t;
    out.indices.resize(g.n);
    out.mask.assign(g.n * g.t, 0.0);
    for (std::size_t i = 0; i < g.n; ++i) {
        std::vector<std::size_t> candidates;
        std::size_t real_len = 0;
        for (std::size_t tok = 0; tok < g.t; ++tok) {
            if (g.mask[i * g.t + tok] < 0.5) continue;
            ++real_len;
            if (tok > 0) candidates.push_back(tok);  // CLS never perturbed
        }
        // descending score, ties toward smaller token index
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](std::size_t a, std::size_t b) {
                             return g.g[i * g.t + a] > g.g[i * g.t + b];
                         });
        std::size_t k = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(real_len))));
        k = std::min(k, candidates.size());
        candidates.resize(k);
        std::sort(candidates.begin(), candidates.end());
        out.indices[i] = std::move(candidates);
        for (std::size_t tok : out.indices[i]) out.mask[i * g.t + tok] = 1.0;
    }
    return out;
}

std::vector<double> pgd_attack(const std::vector<double>& e0, std::size_t n, std::size_t t,
                               std::size_t d, const SalientSet& salient,
                               const std::function<TensorPtr(const TensorPtr&)>& loss_fn,
                               const PTDConfig& cfg) {
    cfg.validate();
    if (e0.size() != n * t * d) throw ContractError("pgd_attack: e0 size mismatch");
    std::vector<double> e_pert = e0;
    for (std::size_t iter = 0; iter < cfg.pgd_steps; ++iter) {
        auto e_node = make_tensor({n * t, d}, e_pert, /*requires_grad=*/true);
        auto loss = loss_fn(e_node);
        if (!std::isfinite(loss->data[0]))
            throw NumericError("pgd_attack: non-finite loss at iteration " + std::to_string(iter));
        backward(loss);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t tok : salient.indices[i]) {
                double* row = e_pert.data() + (i * t + tok) * d;
                const double* orig = e0.data() + (i * t + tok) * d;
                const double* grad = e_node->grad.data() + (i * t + tok) * d;
                double gnorm = 0.0;
                for (std::size_t j = 0; j < d; ++j) gnorm += grad[j] * grad[j];
                gnorm = std::sqrt(gnorm);
                if (gnorm <= 1e-12) continue;  // zero-gradient token: zero step
                for (std::size_t j = 0; j < d; ++j) {
                    const double s = grad[j] > 0.0 ? 1.0 : (grad[j] < 0.0 ? -1.0 : 0.0);
                    row[j] += cfg.alpha * s;
                }
                // project back into the per-token L2 epsilon-ball
                double dnorm = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dv = row[j] - orig[j];
                    dnorm += dv * dv;
                }
                dnorm = std::sqrt(dnorm);
                if (dnorm > cfg.epsilon) {
                    const double scale = cfg.epsilon / dnorm;
                    for (std::size_t j = 0; j < d; ++j)
                        row[j] = orig[j] + (row[j] - orig[j]) * scale;
                }
            }
        }
    }
    std::vector<double> delta(n * t * d, 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = e_pert[i] - e0[i];
    // whole-matrix Frobenius cap
    const double cap = cfg.frobenius_cap > 0.0
                           ? cfg.frobenius_cap
                           : cfg.epsilon * std::sqrt(static_cast<double>(
                                 std::max<std::size_t>(salient.total(), 1)));
    double fro = 0.0;
    for (double v : delta) fro += v * v;
    fro = std::sqrt(fro);
    if (fro > cap) {
        const double scale = cap / fro;
        for (auto& v : delta) v *= scale;
    }
    return delta;
}

std::vector<double> apply_perturbation(const std::vector<double>& e,
                                       const std::vector<double>& delta_e,
                                       const std::vector<double>& mask, std::size_t d) {
    if (e.size() != delta_e.size() || e.size() != mask.size() * d)
        throw ContractError("apply_perturbation: shape mismatch");
    std::vector<double> out = e;
    for (std::size_t tok = 0; tok < mask.size(); ++tok) {
        if (mask[tok] < 0.5) continue;
        for (std::size_t j = 0; j < d; ++j) out[tok * d + j] += delta_e[tok * d + j];
    }
    return out;
}

TensorPtr apply_perturbation(const TensorPtr& e, const std::vector<double>& delta_e,
                             const std::vector<double>& mask, std::size_t d) {
    if (e->size() != delta_e.size() || e->size() != mask.size() * d)
        throw ContractError("apply_perturbation: shape mismatch");
    auto masked = make_tensor(e->shape);
    for (std::size_t tok = 0; tok < mask.size(); ++tok) {
        if (mask[tok] < 0.5) continue;
        for (std::size_t j = 0; j < d; ++j) masked->data[tok * d + j] = delta_e[tok * d + j];
    }
    return add(e, masked);
}

TensorPtr focal_loss(const TensorPtr& p, const std::vector<double>& perturbed_mask,
                     const std::vector<double>& valid_mask, double gamma) {
    if (gamma < 0.0) throw ConfigError("focal_loss: gamma must be >= 0");
    if (p->size() != perturbed_mask.size() || p->size() != valid_mask.size())
        throw ContractError("focal_loss: mask size mismatch");
    for (double v : p->data)
        if (v <= 0.0 || v >= 1.0)
            throw ContractError("focal_loss: predictions must lie strictly in (0,1)");
    double count = 0.0;
    for (double v : valid_mask) count += v > 0.5 ? 1.0 : 0.0;
    if (count == 0.0) throw ContractError("focal_loss: no valid positions");

    auto m = make_tensor(p->shape);
    auto inv_m = make_tensor(p->shape);
    auto valid = make_tensor(p->shape);
    for (std::size_t i = 0; i < p->size(); ++i) {
        m->data[i] = perturbed_mask[i] > 0.5 ? 1.0 : 0.0;
        inv_m->data[i] = 1.0 - m->data[i];
        valid->data[i] = valid_mask[i] > 0.5 ? 1.0 : 0.0;
    }
    // p_t = p where perturbed, 1-p where clean
    auto one_minus_p = add_scalar(mul_scalar(p, -1.0), 1.0);
    auto p_t = add(mul(m, p), mul(inv_m, one_minus_p));
    auto one_minus_pt = add_scalar(mul_scalar(p_t, -1.0), 1.0);
    auto term = mul(pow_scalar(one_minus_pt, gamma), log_(p_t));
    return mul_scalar(sum_all(mul(valid, term)), -1.0 / count);
}

}  // namespace carl
