#include "carl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "carl/errors.hpp"
#include "carl/rng.hpp"

namespace carl {

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0)
        throw DataError("correlation undefined: constant input vector");
    return sab / std::sqrt(saa * sbb);
}

// seeded shuffle then 80/20 split; returns (train_idx, test_idx)
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed ^ 0x50B3CA7E0FF1CE5DULL);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    const std::size_t n_test = std::max<std::size_t>(1, n / 5);
    std::vector<std::size_t> test(order.begin(), order.begin() + n_test);
    std::vector<std::size_t> train(order.begin() + n_test, order.end());
    return {train, test};
}

// Cholesky solve of the SPD system A w = b, in place on copies.
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * d + k] * a[j * d + k];
            if (i == j) {
                if (s <= 0.0) throw NumericError("cholesky_solve: matrix not positive definite");
                a[i * d + j] = std::sqrt(s);
            } else {
                a[i * d + j] = s / a[j * d + j];
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * d + k] * b[k];
        b[i] = s / a[i * d + i];
    }
    for (std::size_t ii = d; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double s = b[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= a[k * d + i] * b[k];
        b[i] = s / a[i * d + i];
    }
    return b;
}

void normalize_rows_copy(std::vector<double>& x, std::size_t n, std::size_t d) {
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
        const double norm = std::max(std::sqrt(s), 1e-12);
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] /= norm;
    }
}

}  // namespace

CorrelationStats correlation_stats(const std::vector<double>& pred,
                                   const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw ContractError("correlation_stats: length mismatch");
    if (pred.size() < 3) throw ContractError("correlation_stats: needs n >= 3");
    double mae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mae += std::abs(pred[i] - truth[i]);
    mae /= static_cast<double>(pred.size());
    const double r = pearson(pred, truth);
    const double rho = pearson(average_ranks(pred), average_ranks(truth));
    return {mae, r, rho};
}

ProbeReport regression_probe(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                             const std::vector<double>& targets, std::uint64_t split_seed) {
    if (embeddings.size() != n * d || targets.size() != n)
        throw ContractError("regression_probe: shape mismatch");
    if (n < 10) throw ContractError("regression_probe: needs n >= 10");
    const double mean_t = std::accumulate(targets.begin(), targets.end(), 0.0) /
                          static_cast<double>(n);
    double var_t = 0.0;
    for (double t : targets) var_t += (t - mean_t) * (t - mean_t);
    if (var_t == 0.0) throw DataError("regression_probe: degenerate (zero-variance) targets");

    auto [train_idx, test_idx] = split_indices(n, split_seed);
    const std::size_t nt = train_idx.size();

    // center on the train split, ridge on the centered design
    std::vector<double> mean_x(d, 0.0);
    double mean_y = 0.0;
    for (auto i : train_idx) {
        for (std::size_t j = 0; j < d; ++j) mean_x[j] += embeddings[i * d + j];
        mean_y += targets[i];
    }
    for (auto& v : mean_x) v /= static_cast<double>(nt);
    mean_y /= static_cast<double>(nt);

    std::vector<double> xtx(d * d, 0.0), xty(d, 0.0);
    for (auto i : train_idx) {
        for (std::size_t j = 0; j < d; ++j) {
            const double xj = embeddings[i * d + j] - mean_x[j];
            xty[j] += xj * (targets[i] - mean_y);
            for (std::size_t k = j; k < d; ++k)
                xtx[j * d + k] += xj * (embeddings[i * d + k] - mean_x[k]);
        }
    }
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < j; ++k) xtx[j * d + k] = xtx[k * d + j];
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += xtx[j * d + j];
    const double reg = 1e-3 * std::max(trace / static_cast<double>(d), 1e-12);
    for (std::size_t j = 0; j < d; ++j) xtx[j * d + j] += reg;
    const auto w = cholesky_solve(xtx, xty, d);

    std::vector<double> pred, truth;
    pred.reserve(test_idx.size());
    for (auto i : test_idx) {
        double y = mean_y;
        for (std::size_t j = 0; j < d; ++j) y += w[j] * (embeddings[i * d + j] - mean_x[j]);
        pred.push_back(y);
        truth.push_back(targets[i]);
    }
    const auto stats = correlation_stats(pred, truth);
    ProbeReport rep;
    rep.task = "regression";
    rep.mae = stats.mae;
    rep.pearson_r = stats.pearson_r;
    rep.spearman_rho = stats.spearman_rho;
    return rep;
}

ProbeReport classification_probe(const std::vector<double>& embeddings, std::size_t n,
                                 std::size_t d, const std::vector<std::string>& labels,
                                 std::uint64_t split_seed) {
    if (embeddings.size() != n * d || labels.size() != n)
        throw ContractError("classification_probe: shape mismatch");
    std::map<std::string, std::size_t> class_ids;
    for (const auto& l : labels) class_ids.emplace(l, 0);
    std::size_t next = 0;
    for (auto& [name, id] : class_ids) id = next++;
    const std::size_t c = class_ids.size();
    if (c < 2) throw DataError("classification_probe: needs >= 2 classes");
    std::vector<std::size_t> y(n);
    std::vector<std::size_t> counts(c, 0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = class_ids[labels[i]];
        ++counts[y[i]];
    }
    for (const auto& [name, id] : class_ids)
        if (counts[id] < 5)
            throw DataError("classification_probe: class '" + name + "' has " +
                            std::to_string(counts[id]) + " samples (< 5)");

    auto [train_idx, test_idx] = split_indices(n, split_seed);

    // standardize features on train-split statistics; fixed-step gradient
    // descent stalls on small-scale raw features otherwise
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (auto i : train_idx)
        for (std::size_t j = 0; j < d; ++j) mu[j] += embeddings[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mu[j] /= static_cast<double>(train_idx.size());
    for (auto i : train_idx)
        for (std::size_t j = 0; j < d; ++j) {
            const double v = embeddings[i * d + j] - mu[j];
            sd[j] += v * v;
        }
    for (std::size_t j = 0; j < d; ++j)
        sd[j] = std::max(std::sqrt(sd[j] / static_cast<double>(train_idx.size())), 1e-12);
    std::vector<double> feat(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            feat[i * d + j] = (embeddings[i * d + j] - mu[j]) / sd[j];

    // full-batch multinomial logistic regression, fixed 500 steps of 0.1
    std::vector<double> w(c * (d + 1), 0.0);  // per class: weights + bias
    const double inv_nt = 1.0 / static_cast<double>(train_idx.size());
    std::vector<double> logits(c), probs(c), grad(c * (d + 1));
    for (int iter = 0; iter < 500; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (auto i : train_idx) {
            double mx = -1e308;
            for (std::size_t k = 0; k < c; ++k) {
                double s = w[k * (d + 1) + d];
                for (std::size_t j = 0; j < d; ++j) s += w[k * (d + 1) + j] * feat[i * d + j];
                logits[k] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                probs[k] = std::exp(logits[k] - mx);
                z += probs[k];
            }
            for (std::size_t k = 0; k < c; ++k) {
                const double err = probs[k] / z - (y[i] == k ? 1.0 : 0.0);
                for (std::size_t j = 0; j < d; ++j)
                    grad[k * (d + 1) + j] += err * feat[i * d + j];
                grad[k * (d + 1) + d] += err;
            }
        }
        for (std::size_t idx = 0; idx < w.size(); ++idx) w[idx] -= 0.1 * grad[idx] * inv_nt;
    }

    // confusion matrix on the test split
    std::vector<std::size_t> confusion(c * c, 0);
    std::size_t correct = 0;
    for (auto i : test_idx) {
        std::size_t best = 0;
        double best_s = -1e308;
        for (std::size_t k = 0; k < c; ++k) {
            double s = w[k * (d + 1) + d];
            for (std::size_t j = 0; j < d; ++j) s += w[k * (d + 1) + j] * feat[i * d + j];
            if (s > best_s) {
                best_s = s;
                best = k;
            }
        }
        ++confusion[y[i] * c + best];
        correct += best == y[i] ? 1 : 0;
    }
    ProbeReport rep;
    rep.task = "classification";
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());
    double prec = 0.0, rec = 0.0, f1 = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        double tp = static_cast<double>(confusion[k * c + k]);
        double pred_k = 0.0, true_k = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            pred_k += static_cast<double>(confusion[j * c + k]);
            true_k += static_cast<double>(confusion[k * c + j]);
        }
        const double p = pred_k > 0.0 ? tp / pred_k : 0.0;
        const double r = true_k > 0.0 ? tp / true_k : 0.0;
        prec += p;
        rec += r;
        f1 += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    rep.precision = prec / static_cast<double>(c);
    rep.recall = rec / static_cast<double>(c);
    rep.f1 = f1 / static_cast<double>(c);
    return rep;
}

double alignment(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                 const std::vector<std::pair<std::size_t, std::size_t>>& positive_pairs) {
    if (positive_pairs.empty()) throw ContractError("alignment: needs >= 1 positive pair");
    std::vector<double> x = embeddings;
    normalize_rows_copy(x, n, d);
    double total = 0.0;
    for (const auto& [i, j] : positive_pairs) {
        if (i >= n || j >= n) throw ContractError("alignment: pair index out of range");
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = x[i * d + k] - x[j * d + k];
            s += diff * diff;
        }
        total += s;
    }
    return total / static_cast<double>(positive_pairs.size());
}

double uniformity(const std::vector<double>& embeddings, std::size_t n, std::size_t d) {
    if (n < 2) throw ContractError("uniformity: needs n >= 2");
    std::vector<double> x = embeddings;
    normalize_rows_copy(x, n, d);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x[i * d + k] - x[j * d + k];
                s += diff * diff;
            }
            total += std::exp(-2.0 * s);
            ++count;
        }
    return std::log(total / static_cast<double>(count));
}

std::vector<std::pair<std::size_t, std::size_t>> emotion_positive_pairs(
    const std::vector<std::string>& emotions, std::size_t max_pairs, std::uint64_t seed) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < emotions.size(); ++i) {
        if (emotions[i].empty()) continue;
        for (std::size_t j = i + 1; j < emotions.size(); ++j)
            if (emotions[i] == emotions[j]) pairs.emplace_back(i, j);
    }
    if (pairs.size() > max_pairs) {
        Rng rng(seed ^ 0x9A125EED00000000ULL);
        for (std::size_t i = 0; i < max_pairs; ++i)
            std::swap(pairs[i], pairs[i + rng.uniform_int(pairs.size() - i)]);
        pairs.resize(max_pairs);
    }
    return pairs;
}

PcaResult pca_project(const std::vector<double>& embeddings, std::size_t n, std::size_t d,
                      std::size_t dims, std::uint64_t seed) {
    if (n <= dims) throw ContractError("pca_project: needs n > dims");
    // center
    std::vector<double> x = embeddings;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (auto& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] -= mean[j];

    // covariance (biased by 1/n; fractions are scale-free)
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = j; k < d; ++k)
                cov[j * d + k] += x[i * d + j] * x[i * d + k];
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < j; ++k) cov[j * d + k] = cov[k * d + j];
    double total_var = 0.0;
    for (std::size_t j = 0; j < d; ++j) total_var += cov[j * d + j];

    PcaResult result;
    if (total_var <= 0.0) {
        std::cerr << "warning: pca_project on rank-0 data, no components returned\n";
        result.coords.assign(n * 0, 0.0);
        return result;
    }

    Rng rng(seed);
    std::vector<std::vector<double>> components;
    std::vector<double> eigenvalues;
    for (std::size_t comp = 0; comp < dims; ++comp) {
        std::vector<double> v(d);
        for (auto& vi : v) vi = rng.normal();
        double lambda = 0.0;
        for (int iter = 0; iter < 1000; ++iter) {
            std::vector<double> nv(d, 0.0);
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t k = 0; k < d; ++k) nv[j] += cov[j * d + k] * v[k];
            double norm = 0.0;
            for (double vi : nv) norm += vi * vi;
            norm = std::sqrt(norm);
            if (norm < 1e-300) break;
            for (auto& vi : nv) vi /= norm;
            double diff = 0.0;
            for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(nv[j] - v[j]));
            // sign flips oscillate for negative eigenvalues; covariances are PSD
            v = nv;
            lambda = norm;
            if (diff < 1e-9) break;
        }
        if (lambda <= 1e-12 * total_var) {
            std::cerr << "warning: pca_project rank " << comp << " < requested " << dims << "\n";
            break;
        }
        // sign convention: first nonzero loading positive
        for (std::size_t j = 0; j < d; ++j) {
            if (std::abs(v[j]) > 1e-12) {
                if (v[j] < 0.0)
                    for (auto& vi : v) vi = -vi;
                break;
            }
        }
        // deflate
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) cov[j * d + k] -= lambda * v[j] * v[k];
        components.push_back(v);
        eigenvalues.push_back(lambda);
    }

    result.dims = components.size();
    result.coords.assign(n * result.dims, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < result.dims; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * components[c][j];
            result.coords[i * result.dims + c] = s;
        }
    for (double lambda : eigenvalues) result.explained_fraction.push_back(lambda / total_var);
    return result;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ContractError("roc_auc: length mismatch");
    const auto ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i]) {
            rank_sum_pos += ranks[i];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0) throw DataError("roc_auc: needs both classes present");
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

}  // namespace carl
