#include "mtfc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mtfc/errors.hpp"

namespace mtfc::ag {

namespace {

thread_local bool t_grad_enabled = true;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows != b->rows || a->cols != b->cols)
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a->rows) + "x" +
                        std::to_string(a->cols) + " vs " + std::to_string(b->rows) + "x" +
                        std::to_string(b->cols));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw ContractError("constant: value count != rows*cols");
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return n;
}

Var zeros(std::size_t rows, std::size_t cols) {
  return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Var scalar(double v) { return constant(1, 1, {v}); }

Var parameter(std::size_t rows, std::size_t cols, std::vector<double> values, std::string name) {
  auto n = constant(rows, cols, std::move(values));
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

Var make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  if (t_grad_enabled &&
      std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; })) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void backward(const Var& root) {
  if (root->size() != 1) throw ContractError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

void zero_grad(std::span<const Var> params) {
  for (const auto& p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a->cols != b->rows)
    throw ContractError("matmul: inner dimensions " + std::to_string(a->cols) + " vs " +
                        std::to_string(b->rows));
  const std::size_t n = a->rows, k = a->cols, m = b->cols;
  std::vector<double> out(n * m, 0.0);
  kernels::matmul(a->value, b->value, out, n, k, m);
  return make_result(n, m, std::move(out), {a, b}, [a, b, n, k, m](Node& self) {
    if (a->requires_grad) kernels::matmul_nt(self.grad, b->value, a->ensure_grad(), n, m, k);
    if (b->requires_grad) kernels::matmul_tn(a->value, self.grad, b->ensure_grad(), k, n, m);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_result(a->rows, a->cols, std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var* p : {&a, &b}) {
      if (!(*p)->requires_grad) continue;
      auto& g = (*p)->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var add_row(const Var& a, const Var& bias) {
  if (bias->rows != 1 || bias->cols != a->cols) throw ContractError("add_row: bias shape");
  const std::size_t n = a->rows, m = a->cols;
  std::vector<double> out(a->value);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias->value[j];
  return make_result(n, m, std::move(out), {a, bias}, [a, bias, n, m](Node& self) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bias->requires_grad) {
      auto& g = bias->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    }
  });
}

Var scale(const Var& a, double s) {
  std::vector<double> out(a->value);
  for (auto& x : out) x *= s;
  return make_result(a->rows, a->cols, std::move(out), {a}, [a, s](Node& self) {
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var relu(const Var& a) {
  std::vector<double> out(a->value);
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return make_result(a->rows, a->cols, std::move(out), {a}, [a](Node& self) {
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (a->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var sigmoid(const Var& a) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a->value[i];
    // Split by sign to avoid overflow in exp.
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(a->rows, a->cols, out, {a}, [a, out](Node& self) {
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i] * (1.0 - out[i]);
  });
}

Var rms_norm(const Var& a, const Var& gain, double eps) {
  if (gain->rows != 1 || gain->cols != a->cols) throw ContractError("rms_norm: gain shape");
  const std::size_t n = a->rows, m = a->cols;
  std::vector<double> out(n * m), inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < m; ++j) ss += a->value[i * m + j] * a->value[i * m + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = a->value[i * m + j] * inv[i] * gain->value[j];
  }
  return make_result(n, m, std::move(out), {a, gain}, [a, gain, inv, n, m](Node& self) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j)
          dot += self.grad[i * m + j] * gain->value[j] * a->value[i * m + j];
        const double r = inv[i];
        const double coef = r * r * r * dot / static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j)
          g[i * m + j] += r * gain->value[j] * self.grad[i * m + j] - a->value[i * m + j] * coef;
      }
    }
    if (gain->requires_grad) {
      auto& g = gain->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          g[j] += self.grad[i * m + j] * a->value[i * m + j] * inv[i];
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const std::size_t d = table->cols;
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= table->rows)
      throw ContractError("embedding: id " + std::to_string(idv[r]) + " outside table of " +
                          std::to_string(table->rows));
    std::copy_n(table->value.begin() + static_cast<std::ptrdiff_t>(idv[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_result(idv.size(), d, std::move(out), {table}, [table, idv, d](Node& self) {
    auto& g = table->ensure_grad();
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < d; ++j)
        g[static_cast<std::size_t>(idv[r]) * d + j] += self.grad[r * d + j];
  });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ContractError("dropout: p must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a->size());
  for (auto& m : mask) m = uniform01(rng) < p ? 0.0 : keep_scale;
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * mask[i];
  return make_result(a->rows, a->cols, std::move(out), {a}, [a, mask](Node& self) {
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::span<const std::uint8_t> key_mask,
              const kernels::AttentionShape& shape) {
  if (shape.heads == 0 || shape.d_model % shape.heads != 0)
    throw ContractError("attention: d_model must be divisible by heads");
  if (q->rows != shape.batch * shape.query_len || k->rows != shape.batch * shape.key_len ||
      v->rows != k->rows || q->cols != shape.d_model || k->cols != shape.d_model ||
      v->cols != shape.d_model || key_mask.size() != shape.batch * shape.key_len)
    throw ContractError("attention: operand shapes do not match AttentionShape");
  std::vector<double> out(q->size(), 0.0);
  auto probs = std::make_shared<std::vector<double>>(shape.probs_size(), 0.0);
  kernels::attention_forward(q->value, k->value, v->value, key_mask, shape, out, *probs);
  return make_result(q->rows, q->cols, std::move(out), {q, k, v},
                     [q, k, v, probs, shape](Node& self) {
                       std::vector<double> dq(q->size(), 0.0), dk(k->size(), 0.0),
                           dv(v->size(), 0.0);
                       kernels::attention_backward(q->value, k->value, v->value, *probs,
                                                   self.grad, shape, dq, dk, dv);
                       const std::pair<const Var*, std::vector<double>*> targets[] = {
                           {&q, &dq}, {&k, &dk}, {&v, &dv}};
                       for (const auto& [var, g] : targets) {
                         if (!(*var)->requires_grad) continue;
                         auto& dst = (*var)->ensure_grad();
                         for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*g)[i];
                       }
                     });
}

Var masked_mean_pool(const Var& hidden, std::span<const std::uint8_t> mask, std::size_t batch,
                     std::size_t len) {
  if (hidden->rows != batch * len || mask.size() != batch * len)
    throw ContractError("masked_mean_pool: shape mismatch");
  const std::size_t d = hidden->cols;
  std::vector<double> out(batch * d, 0.0), inv_count(batch);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (!m[b * len + t]) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += hidden->value[(b * len + t) * d + j];
    }
    if (count == 0)
      throw DegenerateInputError("masked_mean_pool: row " + std::to_string(b) +
                                 " has no unmasked position");
    inv_count[b] = 1.0 / static_cast<double>(count);
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv_count[b];
  }
  return make_result(batch, d, std::move(out), {hidden},
                     [hidden, m, inv_count, batch, len, d](Node& self) {
                       auto& g = hidden->ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < len; ++t) {
                           if (!m[b * len + t]) continue;
                           for (std::size_t j = 0; j < d; ++j)
                             g[(b * len + t) * d + j] += self.grad[b * d + j] * inv_count[b];
                         }
                     });
}

Var first_token_pool(const Var& hidden, std::size_t batch, std::size_t len) {
  if (hidden->rows != batch * len) throw ContractError("first_token_pool: shape mismatch");
  const std::size_t d = hidden->cols;
  std::vector<double> out(batch * d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(hidden->value.begin() + static_cast<std::ptrdiff_t>(b * len * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(b * d));
  return make_result(batch, d, std::move(out), {hidden}, [hidden, batch, len, d](Node& self) {
    auto& g = hidden->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < d; ++j) g[b * len * d + j] += self.grad[b * d + j];
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a->rows) throw ContractError("slice_rows: range out of bounds");
  const std::size_t m = a->cols;
  std::vector<double> out(a->value.begin() + static_cast<std::ptrdiff_t>(begin * m),
                          a->value.begin() + static_cast<std::ptrdiff_t>(end * m));
  return make_result(end - begin, m, std::move(out), {a}, [a, begin, m](Node& self) {
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
  });
}

}  // namespace mtfc::ag
