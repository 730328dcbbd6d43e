#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "carl/rng.hpp"

namespace carl {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// A node in the reverse-mode autodiff graph. Dense row-major f64 storage;
// 1-D tensors are treated as shape {n} and matrices as {rows, cols}.
// Intermediate nodes hold their parents plus a closure that scatters
// out->grad into the parents' grad buffers.
class Tensor {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return data.size() == 1; }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// --- node construction ---------------------------------------------------

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr make_scalar(double value);
std::string shape_str(const Tensor& t);

// --- elementwise ----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr mul_scalar(const TensorPtr& a, double c);
TensorPtr pow_scalar(const TensorPtr& a, double p);
TensorPtr exp_(const TensorPtr& a);
TensorPtr log_(const TensorPtr& a, double floor = 1e-12);
TensorPtr tanh_(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);

// --- linear algebra / shape ----------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);
TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& bias);
TensorPtr slice_rows(const TensorPtr& x, std::size_t start, std::size_t count);
TensorPtr slice_cols(const TensorPtr& x, std::size_t start, std::size_t count);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr gather_rows(const TensorPtr& table, const std::vector<std::size_t>& ids);

// --- reductions / normalizations -------------------------------------------

TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& x, double temperature = 1.0);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-5);
TensorPtr l2_normalize_rows(const TensorPtr& x, double eps = 1e-12);

// --- stochastic -------------------------------------------------------------

// Inverted dropout with a mask drawn from `rng`; p == 0 is the identity.
TensorPtr dropout(const TensorPtr& x, double p, Rng& rng);

// --- graph traversal --------------------------------------------------------

// Reverse topological sweep from a scalar loss. Grads accumulate; callers
// zero parameter grads between backward passes.
void backward(const TensorPtr& loss);

// Zeroes the grad of `node` and every ancestor (for re-running backward
// through an already-swept subgraph).
void zero_graph(const TensorPtr& node);

// Detached copy: same data, no parents, no grad flow.
TensorPtr detach(const TensorPtr& a);

// --- finite-difference checking ----------------------------------------------

// Rebuilds the loss via `build_loss` (which must read the current contents of
// `params`) and compares analytic grads against central differences. Returns
// max over checked coordinates of |analytic - numeric| / max(1,|analytic|,|numeric|).
// max_coords_per_param == 0 checks every coordinate; otherwise a seeded sample.
double grad_check(const std::function<TensorPtr()>& build_loss,
                  const std::vector<TensorPtr>& params, double h = 1e-5,
                  std::size_t max_coords_per_param = 0, std::uint64_t sample_seed = 0);

}  // namespace carl
