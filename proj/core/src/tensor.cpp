#include "carl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "carl/errors.hpp"

namespace carl {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b));
    }
}

TensorPtr make_child(std::vector<std::size_t> shape, std::vector<TensorPtr> parents) {
    auto out = make_tensor(std::move(shape));
    out->requires_grad = false;
    for (const auto& p : parents) out->requires_grad = out->requires_grad || p->requires_grad;
    out->parents = std::move(parents);
    return out;
}

}  // namespace

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << 'x';
        os << t.shape[i];
    }
    os << ']';
    return os.str();
}

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    const std::size_t n = shape_product(shape);
    t->shape = std::move(shape);
    t->data.assign(n, 0.0);
    t->grad.assign(n, 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad) {
    const std::size_t n = shape_product(shape);
    if (data.size() != n) {
        throw ContractError("make_tensor: data length " + std::to_string(data.size()) +
                            " does not match shape product " + std::to_string(n));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->grad.assign(n, 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_scalar(double value) { return make_tensor({1}, std::vector<double>{value}); }

// --- elementwise ----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "add");
    auto out = make_child(a->shape, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    out->backward_fn = [a, b, out = out.get()]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
    };
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "sub");
    auto out = make_child(a->shape, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    out->backward_fn = [a, b, out = out.get()]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] -= out->grad[i];
    };
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "mul");
    auto out = make_child(a->shape, {a, b});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    out->backward_fn = [a, b, out = out.get()]() {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
    };
    return out;
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + c;
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
    };
    return out;
}

TensorPtr mul_scalar(const TensorPtr& a, double c) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
    out->backward_fn = [a, out = out.get(), c]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
    };
    return out;
}

TensorPtr pow_scalar(const TensorPtr& a, double p) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::pow(a->data[i], p);
    out->backward_fn = [a, out = out.get(), p]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i)
            a->grad[i] += out->grad[i] * p * std::pow(a->data[i], p - 1.0);
    };
    return out;
}

TensorPtr exp_(const TensorPtr& a) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::exp(a->data[i]);
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * out->data[i];
    };
    return out;
}

TensorPtr log_(const TensorPtr& a, double floor) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::log(std::max(a->data[i], floor));
    out->backward_fn = [a, out = out.get(), floor]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i)
            a->grad[i] += out->grad[i] / std::max(a->data[i], floor);
    };
    return out;
}

TensorPtr tanh_(const TensorPtr& a) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::tanh(a->data[i]);
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i)
            a->grad[i] += out->grad[i] * (1.0 - out->data[i] * out->data[i]);
    };
    return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i)
            a->grad[i] += out->grad[i] * out->data[i] * (1.0 - out->data[i]);
    };
    return out;
}

TensorPtr gelu(const TensorPtr& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    auto out = make_child(a->shape, {a});
    for (std::size_t i = 0; i < a->size(); ++i) {
        const double x = a->data[i];
        out->data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) {
            const double x = a->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            a->grad[i] += out->grad[i] * (cdf + x * pdf);
        }
    };
    return out;
}

// --- linear algebra / shape ----------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
        throw ContractError("matmul: incompatible shapes " + shape_str(*a) + " x " +
                            shape_str(*b));
    }
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_child({m, n}, {a, b});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a->data[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] += av * b->data[p * n + j];
        }
    }
    out->backward_fn = [a, b, out = out.get(), m, k, n]() {
        if (a->requires_grad) {
            // a.grad += out.grad * b^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        s += out->grad[i * n + j] * b->data[p * n + j];
                    a->grad[i * k + p] += s;
                }
        }
        if (b->requires_grad) {
            // b.grad += a^T * out.grad
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = a->data[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        b->grad[p * n + j] += av * out->grad[i * n + j];
                }
        }
    };
    return out;
}

TensorPtr transpose(const TensorPtr& a) {
    if (a->shape.size() != 2) throw ContractError("transpose: expected 2-D, got " + shape_str(*a));
    const std::size_t m = a->shape[0], n = a->shape[1];
    auto out = make_child({n, m}, {a});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    out->backward_fn = [a, out = out.get(), m, n]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
    };
    return out;
}

TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& bias) {
    const std::size_t r = x->rows(), d = x->cols();
    if (bias->size() != d) {
        throw ContractError("add_row_broadcast: bias " + shape_str(*bias) + " vs cols " +
                            std::to_string(d));
    }
    auto out = make_child(x->shape, {x, bias});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out->data[i * d + j] = x->data[i * d + j] + bias->data[j];
    out->backward_fn = [x, bias, out = out.get(), r, d]() {
        if (x->requires_grad)
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
        if (bias->requires_grad)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < d; ++j) bias->grad[j] += out->grad[i * d + j];
    };
    return out;
}

TensorPtr slice_rows(const TensorPtr& x, std::size_t start, std::size_t count) {
    const std::size_t r = x->rows(), d = x->cols();
    if (start + count > r) throw ContractError("slice_rows: range out of bounds");
    auto out = make_child({count, d}, {x});
    std::copy(x->data.begin() + start * d, x->data.begin() + (start + count) * d,
              out->data.begin());
    out->backward_fn = [x, out = out.get(), start, d, count]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < count * d; ++i) x->grad[start * d + i] += out->grad[i];
    };
    return out;
}

TensorPtr slice_cols(const TensorPtr& x, std::size_t start, std::size_t count) {
    const std::size_t r = x->rows(), d = x->cols();
    if (start + count > d) throw ContractError("slice_cols: range out of bounds");
    auto out = make_child({r, count}, {x});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out->data[i * count + j] = x->data[i * d + start + j];
    out->backward_fn = [x, out = out.get(), start, d, count, r]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j)
                x->grad[i * d + start + j] += out->grad[i * count + j];
    };
    return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty list");
    const std::size_t d = parts[0]->cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->cols() != d) throw ContractError("concat_rows: column mismatch");
        total += p->rows();
    }
    auto out = make_child({total, d}, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->size();
    }
    auto held = parts;
    out->backward_fn = [held, out = out.get()]() {
        std::size_t off = 0;
        for (const auto& p : held) {
            if (p->requires_grad)
                for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
            off += p->size();
        }
    };
    return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty list");
    const std::size_t r = parts[0]->rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->rows() != r) throw ContractError("concat_cols: row mismatch");
        total += p->cols();
    }
    auto out = make_child({r, total}, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p->cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) out->data[i * total + off + j] = p->data[i * pc + j];
        off += pc;
    }
    auto held = parts;
    out->backward_fn = [held, out = out.get(), r, total]() {
        std::size_t off = 0;
        for (const auto& p : held) {
            const std::size_t pc = p->cols();
            if (p->requires_grad)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        p->grad[i * pc + j] += out->grad[i * total + off + j];
            off += pc;
        }
    };
    return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<std::size_t>& ids) {
    const std::size_t rows = table->rows(), d = table->cols();
    for (auto id : ids) {
        if (id >= rows)
            throw DataError("gather_rows: id " + std::to_string(id) + " >= table rows " +
                            std::to_string(rows));
    }
    auto out = make_child({ids.size(), d}, {table});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table->data.begin() + ids[i] * d, table->data.begin() + (ids[i] + 1) * d,
                  out->data.begin() + i * d);
    out->backward_fn = [table, out = out.get(), ids, d]() {
        if (!table->requires_grad) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                table->grad[ids[i] * d + j] += out->grad[i * d + j];
    };
    return out;
}

// --- reductions / normalizations -------------------------------------------

TensorPtr sum_all(const TensorPtr& a) {
    auto out = make_child({1}, {a});
    out->data[0] = std::accumulate(a->data.begin(), a->data.end(), 0.0);
    out->backward_fn = [a, out = out.get()]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0];
    };
    return out;
}

TensorPtr mean_all(const TensorPtr& a) {
    auto out = make_child({1}, {a});
    const double inv = 1.0 / static_cast<double>(a->size());
    out->data[0] = std::accumulate(a->data.begin(), a->data.end(), 0.0) * inv;
    out->backward_fn = [a, out = out.get(), inv]() {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0] * inv;
    };
    return out;
}

TensorPtr softmax_rows(const TensorPtr& x, double temperature) {
    if (temperature <= 0.0)
        throw ConfigError("softmax_rows: temperature must be > 0, got " +
                          std::to_string(temperature));
    const std::size_t r = x->rows(), d = x->cols();
    auto out = make_child(x->shape, {x});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -1e308;
        for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, x->data[i * d + j] / temperature);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = std::exp(x->data[i * d + j] / temperature - mx);
            out->data[i * d + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < d; ++j) out->data[i * d + j] /= sum;
    }
    out->backward_fn = [x, out = out.get(), r, d, temperature]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += out->grad[i * d + j] * out->data[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                x->grad[i * d + j] +=
                    out->data[i * d + j] * (out->grad[i * d + j] - dot) / temperature;
        }
    };
    return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be > 0");
    const std::size_t r = x->rows(), d = x->cols();
    if (gain->size() != d || bias->size() != d)
        throw ContractError("layer_norm: gain/bias size must equal last axis " +
                            std::to_string(d));
    auto out = make_child(x->shape, {x, gain, bias});
    // cache per-row mean and inverse stddev for the backward pass
    auto mu = std::make_shared<std::vector<double>>(r);
    auto inv_std = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += x->data[i * d + j];
        m /= static_cast<double>(d);
        double v = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x->data[i * d + j] - m;
            v += c * c;
        }
        v /= static_cast<double>(d);
        (*mu)[i] = m;
        (*inv_std)[i] = 1.0 / std::sqrt(v + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x->data[i * d + j] - m) * (*inv_std)[i];
            out->data[i * d + j] = xh * gain->data[j] + bias->data[j];
        }
    }
    out->backward_fn = [x, gain, bias, out = out.get(), mu, inv_std, r, d]() {
        for (std::size_t i = 0; i < r; ++i) {
            const double is = (*inv_std)[i];
            const double m = (*mu)[i];
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double xh = (x->data[i * d + j] - m) * is;
                const double dxh = out->grad[i * d + j] * gain->data[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
                if (gain->requires_grad) gain->grad[j] += out->grad[i * d + j] * xh;
                if (bias->requires_grad) bias->grad[j] += out->grad[i * d + j];
            }
            if (x->requires_grad) {
                const double nd = static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double xh = (x->data[i * d + j] - m) * is;
                    const double dxh = out->grad[i * d + j] * gain->data[j];
                    x->grad[i * d + j] += is * (dxh - sum_dxh / nd - xh * sum_dxh_xh / nd);
                }
            }
        }
    };
    return out;
}

TensorPtr l2_normalize_rows(const TensorPtr& x, double eps) {
    const std::size_t r = x->rows(), d = x->cols();
    auto out = make_child(x->shape, {x});
    auto norms = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x->data[i * d + j] * x->data[i * d + j];
        const double n = std::max(std::sqrt(s), eps);
        (*norms)[i] = n;
        for (std::size_t j = 0; j < d; ++j) out->data[i * d + j] = x->data[i * d + j] / n;
    }
    out->backward_fn = [x, out = out.get(), norms, r, d]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i) {
            const double n = (*norms)[i];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += out->grad[i * d + j] * x->data[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                x->grad[i * d + j] +=
                    out->grad[i * d + j] / n - x->data[i * d + j] * dot / (n * n * n);
        }
    };
    return out;
}

TensorPtr dropout(const TensorPtr& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
    if (p == 0.0) {
        auto out = make_child(x->shape, {x});
        out->data = x->data;
        out->backward_fn = [x, out = out.get()]() {
            if (!x->requires_grad) return;
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
        };
        return out;
    }
    auto mask = std::make_shared<std::vector<double>>(x->size());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x->size(); ++i) (*mask)[i] = rng.uniform() < p ? 0.0 : scale;
    auto out = make_child(x->shape, {x});
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * (*mask)[i];
    out->backward_fn = [x, out = out.get(), mask]() {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * (*mask)[i];
    };
    return out;
}

// --- graph traversal --------------------------------------------------------

void backward(const TensorPtr& loss) {
    if (!loss->is_scalar())
        throw ContractError("backward: loss must be scalar, got " + shape_str(*loss));
    // iterative post-order DFS for a reverse topological sweep
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* next = node->parents[idx].get();
            ++idx;
            if (visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    loss->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn && (*it)->requires_grad) (*it)->backward_fn();
    }
}

void zero_graph(const TensorPtr& node) {
    std::unordered_set<Tensor*> visited;
    std::vector<Tensor*> stack{node.get()};
    visited.insert(node.get());
    while (!stack.empty()) {
        Tensor* cur = stack.back();
        stack.pop_back();
        cur->zero_grad();
        for (const auto& p : cur->parents)
            if (visited.insert(p.get()).second) stack.push_back(p.get());
    }
}

TensorPtr detach(const TensorPtr& a) {
    auto t = std::make_shared<Tensor>();
    t->shape = a->shape;
    t->data = a->data;
    t->grad.assign(a->size(), 0.0);
    t->requires_grad = false;
    return t;
}

// --- finite-difference checking ----------------------------------------------

double grad_check(const std::function<TensorPtr()>& build_loss,
                  const std::vector<TensorPtr>& params, double h,
                  std::size_t max_coords_per_param, std::uint64_t sample_seed) {
    if (h <= 0.0) throw ConfigError("grad_check: step h must be > 0");
    for (const auto& p : params) p->zero_grad();
    auto loss = build_loss();
    if (!std::isfinite(loss->data[0])) throw NumericError("grad_check: non-finite loss value");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad);

    Rng rng(sample_seed);
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<std::size_t> coords;
        if (max_coords_per_param == 0 || p->size() <= max_coords_per_param) {
            coords.resize(p->size());
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (std::size_t c = 0; c < max_coords_per_param; ++c)
                coords.push_back(rng.uniform_int(p->size()));
        }
        for (std::size_t i : coords) {
            const double orig = p->data[i];
            p->data[i] = orig + h;
            const double fp = build_loss()->data[0];
            p->data[i] = orig - h;
            const double fm = build_loss()->data[0];
            p->data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite loss during finite differences");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace carl
