#pragma once

// Dense kernels behind the autodiff engine.
//
// Every kernel has a serial reference and an OpenMP path. Both compute each
// output element with the same summation order, so results are bitwise
// identical regardless of policy or thread count. Tests compare the two and
// bench_kernels times them.

#include <cstddef>
#include <cstdint>
#include <span>

namespace mtfc::kernels {

enum class Policy { kSerial, kParallel };

/// Process-wide default used when a call does not pass a policy.
Policy default_policy();
void set_default_policy(Policy policy);

/// Number of OpenMP threads the parallel path may use (1 without OpenMP).
int max_threads();

// All matrices are row-major. Output is accumulated into C (C += ...).

/// C[n×m] += A[n×k] · B[k×m]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, Policy policy = default_policy());

/// C[n×m] += A[n×k] · B[m×k]ᵀ
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, Policy policy = default_policy());

/// C[n×m] += A[k×n]ᵀ · B[k×m]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, Policy policy = default_policy());

/// Multi-head scaled dot-product attention over packed [batch*len × d_model]
/// matrices. Head h owns columns [h*dh, (h+1)*dh).
struct AttentionShape {
  std::size_t batch = 0;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 0;
  std::size_t d_model = 0;
  bool causal = false;

  std::size_t head_dim() const { return d_model / heads; }
  std::size_t probs_size() const { return batch * heads * query_len * key_len; }
};

/// out[batch*query_len × d_model] = softmax(Q Kᵀ / √dh + mask) V.
/// `key_mask` is [batch × key_len] with 1 = attend. `probs` receives the
/// attention weights [batch × heads × query_len × key_len]; masked weights
/// are exactly 0.
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       const AttentionShape& shape, std::span<double> out,
                       std::span<double> probs, Policy policy = default_policy());

/// Accumulates gradients into dq, dk, dv given d(out).
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionShape& shape,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv,
                        Policy policy = default_policy());

namespace reference {

// Textbook triple loops. Kept as the oracle the policy-dispatched kernels
// are tested against.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m);

}  // namespace reference

}  // namespace mtfc::kernels
