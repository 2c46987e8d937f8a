#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Var is a shared handle to a Node holding a value matrix, an optional
// gradient buffer, and (while grad mode is on) the closure that pushes its
// gradient into its parents. Graphs are built eagerly by the ops below and
// torn down when the last handle to the loss goes away; parameters are leaf
// Vars that outlive every graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtfc/kernels.hpp"

namespace mtfc::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  std::string name;

  std::size_t size() const { return rows * cols; }
  double scalar() const { return value.at(0); }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Whether ops record the graph. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
Var zeros(std::size_t rows, std::size_t cols);
Var scalar(double v);
Var parameter(std::size_t rows, std::size_t cols, std::vector<double> values, std::string name);

/// Creates an op result. Parents and the backward closure are kept only when
/// grad mode is on and some parent requires a gradient.
Var make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Seeds d(root)/d(root) = 1 and runs every backward closure in reverse
/// topological order. Gradients accumulate into leaves.
void backward(const Var& root);

void zero_grad(std::span<const Var> params);

// ---------------------------------------------------------------------------
// Ops

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// a[n×m] + bias[1×m] broadcast over rows.
Var add_row(const Var& a, const Var& bias);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
/// Row-wise RMS normalization with a learned per-column gain [1×m].
Var rms_norm(const Var& a, const Var& gain, double eps = 1e-6);
/// Gathers rows of `table` [V×d]; out-of-range ids throw ContractError.
Var embedding(const Var& table, std::span<const int> ids);
/// Inverted dropout. Identity when p == 0.
Var dropout(const Var& a, double p, std::mt19937_64& rng);
/// Multi-head attention over already-projected Q, K, V.
Var attention(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> key_mask,
              const kernels::AttentionShape& shape);
/// hidden [batch*len × d] -> [batch × d], mean over positions with mask 1.
/// Throws DegenerateInputError when a row has no unmasked position.
Var masked_mean_pool(const Var& hidden, std::span<const std::uint8_t> mask, std::size_t batch,
                     std::size_t len);
/// hidden [batch*len × d] -> [batch × d], position 0 of each row.
Var first_token_pool(const Var& hidden, std::size_t batch, std::size_t len);
/// Copies rows [begin, end) of `a`.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);

/// Uniform double in [0, 1) from 53 random bits; platform independent.
double uniform01(std::mt19937_64& rng);

}  // namespace mtfc::ag
