#include "carl/mccl.hpp"

#include <cmath>
#include <iostream>

#include "carl/errors.hpp"

namespace carl {

void ema_update(EncoderParams& target, const EncoderParams& online, double m) {
    if (m < 0.0 || m > 1.0) throw ContractError("ema_update: m must be in [0,1]");
    for (auto& [name, t] : target.named) {
        const auto& o = online.at(name);
        if (o->shape != t->shape)
            throw ContractError("ema_update: shape mismatch for " + name + ": " + shape_str(*t) +
                                " vs " + shape_str(*o));
        for (std::size_t i = 0; i < t->size(); ++i)
            t->data[i] = m * t->data[i] + (1.0 - m) * o->data[i];
    }
}

double momentum_schedule(std::size_t k, std::size_t total_steps, double m_initial) {
    if (total_steps < 1) throw ContractError("momentum_schedule: K must be >= 1");
    if (k > total_steps) throw ContractError("momentum_schedule: k > K");
    const double frac = static_cast<double>(k) / static_cast<double>(total_steps);
    return 1.0 - (1.0 - m_initial) * (std::cos(3.14159265358979323846 * frac) + 1.0) / 2.0;
}

SimilarityMatrix embedding_similarity(const TensorPtr& q_online, const TensorPtr& z_target) {
    if (q_online->rows() < 2) throw ContractError("embedding_similarity: needs N >= 2");
    if (q_online->shape != z_target->shape)
        throw ContractError("embedding_similarity: shape mismatch " + shape_str(*q_online) +
                            " vs " + shape_str(*z_target));
    auto s = matmul(l2_normalize_rows(q_online), transpose(l2_normalize_rows(detach(z_target))));
    return {s, SimilarityKind::embedding};
}

SimilarityMatrix label_similarity(const std::vector<double>& labels_va, std::size_t n) {
    if (n < 2) throw ContractError("label_similarity: needs N >= 2");
    if (labels_va.size() != 2 * n)
        throw ContractError("label_similarity: labels size must be 2N");
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = labels_va[2 * i], a = labels_va[2 * i + 1];
        norms[i] = std::max(std::sqrt(v * v + a * a), 1e-8);
        if (std::sqrt(v * v + a * a) < 1e-6)
            std::cerr << "warning: record " << i
                      << " has near-zero (valence, arousal); label direction ill-defined\n";
    }
    auto s = make_tensor({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double dot = labels_va[2 * i] * labels_va[2 * j] +
                               labels_va[2 * i + 1] * labels_va[2 * j + 1];
            s->data[i * n + j] = dot / (norms[i] * norms[j]);
        }
    return {s, SimilarityKind::label};
}

RowDistribution to_distribution(const SimilarityMatrix& s, double temperature) {
    if (temperature <= 0.0)
        throw ConfigError("to_distribution: temperature must be > 0, got " +
                          std::to_string(temperature));
    return {softmax_rows(s.values, temperature), temperature};
}

TensorPtr mccl_loss(const RowDistribution& p_sim, const RowDistribution& p_va) {
    const auto& ps = p_sim.rows;
    const auto& pv = p_va.rows;
    if (ps->shape != pv->shape)
        throw ContractError("mccl_loss: shape mismatch " + shape_str(*ps) + " vs " +
                            shape_str(*pv));
    const double n = static_cast<double>(ps->rows());
    auto pv_const = detach(pv);
    auto log_pv = detach(log_(pv_const));
    // CE(p_va, p_sim) + CE(p_sim, p_va), summed over all entries, / N
    auto ce_va_sim = sum_all(mul(pv_const, log_(ps)));
    auto ce_sim_va = sum_all(mul(ps, log_pv));
    return mul_scalar(add(ce_va_sim, ce_sim_va), -1.0 / n);
}

}  // namespace carl
