#include "mtfc/kernels.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtfc::kernels {

namespace {

std::atomic<Policy> g_policy{Policy::kParallel};

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

bool go_parallel(Policy policy, std::size_t work) {
#ifdef _OPENMP
  return policy == Policy::kParallel && work >= kParallelThreshold && !omp_in_parallel();
#else
  (void)policy;
  (void)work;
  return false;
#endif
}

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                       std::size_t m) {
  double* crow = c + i * m;
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t m) {
  const double* arow = a + i * k;
  for (std::size_t j = 0; j < m; ++j) {
    const double* brow = b + j * k;
    double s = c[i * m + j];
    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
    c[i * m + j] = s;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t n, std::size_t k, std::size_t m) {
  double* crow = c + i * m;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * n + i];
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

void attention_forward_item(const double* q, const double* k, const double* v,
                            const std::uint8_t* key_mask, const AttentionShape& s,
                            std::size_t b, std::size_t h, double* out, double* probs) {
  const std::size_t dh = s.head_dim();
  const std::size_t d = s.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> scores(s.key_len);
  for (std::size_t i = 0; i < s.query_len; ++i) {
    const double* qi = q + (b * s.query_len + i) * d + h * dh;
    double* p = probs + ((b * s.heads + h) * s.query_len + i) * s.key_len;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s.key_len; ++j) {
      const bool allowed = key_mask[b * s.key_len + j] != 0 && (!s.causal || j <= i);
      if (!allowed) continue;
      const double* kj = k + (b * s.key_len + j) * d + h * dh;
      double dot = 0.0;
      for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
      scores[j] = dot * scale;
      if (scores[j] > mx) mx = scores[j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < s.key_len; ++j) {
      const bool allowed = key_mask[b * s.key_len + j] != 0 && (!s.causal || j <= i);
      p[j] = allowed ? std::exp(scores[j] - mx) : 0.0;
      total += p[j];
    }
    double* oi = out + (b * s.query_len + i) * d + h * dh;
    for (std::size_t t = 0; t < dh; ++t) oi[t] = 0.0;
    if (total == 0.0) continue;
    for (std::size_t j = 0; j < s.key_len; ++j) {
      p[j] /= total;
      if (p[j] == 0.0) continue;
      const double* vj = v + (b * s.key_len + j) * d + h * dh;
      for (std::size_t t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
    }
  }
}

void attention_backward_item(const double* q, const double* k, const double* v,
                             const double* probs, const double* d_out, const AttentionShape& s,
                             std::size_t b, std::size_t h, double* dq, double* dk, double* dv) {
  const std::size_t dh = s.head_dim();
  const std::size_t d = s.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp(s.key_len);
  for (std::size_t i = 0; i < s.query_len; ++i) {
    const double* p = probs + ((b * s.heads + h) * s.query_len + i) * s.key_len;
    const double* doi = d_out + (b * s.query_len + i) * d + h * dh;
    double row_dot = 0.0;
    for (std::size_t j = 0; j < s.key_len; ++j) {
      dp[j] = 0.0;
      if (p[j] == 0.0) continue;
      const double* vj = v + (b * s.key_len + j) * d + h * dh;
      double* dvj = dv + (b * s.key_len + j) * d + h * dh;
      double acc = 0.0;
      for (std::size_t t = 0; t < dh; ++t) {
        acc += doi[t] * vj[t];
        dvj[t] += p[j] * doi[t];
      }
      dp[j] = acc;
      row_dot += p[j] * acc;
    }
    const double* qi = q + (b * s.query_len + i) * d + h * dh;
    double* dqi = dq + (b * s.query_len + i) * d + h * dh;
    for (std::size_t j = 0; j < s.key_len; ++j) {
      if (p[j] == 0.0) continue;
      const double ds = p[j] * (dp[j] - row_dot) * scale;
      const double* kj = k + (b * s.key_len + j) * d + h * dh;
      double* dkj = dk + (b * s.key_len + j) * d + h * dh;
      for (std::size_t t = 0; t < dh; ++t) {
        dqi[t] += ds * kj[t];
        dkj[t] += ds * qi[t];
      }
    }
  }
}

}  // namespace

Policy default_policy() { return g_policy.load(std::memory_order_relaxed); }

void set_default_policy(Policy policy) { g_policy.store(policy, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, Policy policy) {
  const auto ni = static_cast<std::ptrdiff_t>(n);
  if (go_parallel(policy, n * k * m)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i)
      matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
  } else {
    for (std::size_t i = 0; i < n; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, m);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, Policy policy) {
  const auto ni = static_cast<std::ptrdiff_t>(n);
  if (go_parallel(policy, n * k * m)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i)
      matmul_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
  } else {
    for (std::size_t i = 0; i < n; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, k, m);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, Policy policy) {
  const auto ni = static_cast<std::ptrdiff_t>(n);
  if (go_parallel(policy, n * k * m)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < ni; ++i)
      matmul_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), n, k, m);
  } else {
    for (std::size_t i = 0; i < n; ++i) matmul_tn_row(a.data(), b.data(), c.data(), i, n, k, m);
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       const AttentionShape& shape, std::span<double> out,
                       std::span<double> probs, Policy policy) {
  const auto items = static_cast<std::ptrdiff_t>(shape.batch * shape.heads);
  const std::size_t work = shape.batch * shape.query_len * shape.key_len * shape.d_model;
  if (go_parallel(policy, work)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t it = 0; it < items; ++it) {
      const auto u = static_cast<std::size_t>(it);
      attention_forward_item(q.data(), k.data(), v.data(), key_mask.data(), shape,
                             u / shape.heads, u % shape.heads, out.data(), probs.data());
    }
  } else {
    for (std::size_t b = 0; b < shape.batch; ++b)
      for (std::size_t h = 0; h < shape.heads; ++h)
        attention_forward_item(q.data(), k.data(), v.data(), key_mask.data(), shape, b, h,
                               out.data(), probs.data());
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionShape& shape,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv,
                        Policy policy) {
  const auto items = static_cast<std::ptrdiff_t>(shape.batch * shape.heads);
  const std::size_t work = shape.batch * shape.query_len * shape.key_len * shape.d_model;
  if (go_parallel(policy, work)) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t it = 0; it < items; ++it) {
      const auto u = static_cast<std::size_t>(it);
      attention_backward_item(q.data(), k.data(), v.data(), probs.data(), d_out.data(), shape,
                              u / shape.heads, u % shape.heads, dq.data(), dk.data(),
                              dv.data());
    }
  } else {
    for (std::size_t b = 0; b < shape.batch; ++b)
      for (std::size_t h = 0; h < shape.heads; ++h)
        attention_backward_item(q.data(), k.data(), v.data(), probs.data(), d_out.data(), shape,
                                b, h, dq.data(), dk.data(), dv.data());
  }
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = c[i * m + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = c[i * m + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] = s;
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = c[i * m + j];
      for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * b[p * m + j];
      c[i * m + j] = s;
    }
}

}  // namespace reference

}  // namespace mtfc::kernels
