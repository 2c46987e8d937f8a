#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mtfc/kernels.hpp"

namespace {

using namespace mtfc::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

class KernelsTest : public ::testing::Test {
 protected:
  void SetUp() override {
#ifdef _OPENMP
    // Force a real team even on a single-core host.
    omp_set_num_threads(4);
#endif
  }
};

TEST_F(KernelsTest, MatmulSerialParallelReferenceAgreeBitwise) {
  const std::size_t n = 67, k = 65, m = 63;
  const auto a = random_values(n * k, 1), b = random_values(k * m, 2);
  std::vector<double> s(n * m, 0.5), p(n * m, 0.5), r(n * m, 0.5);
  matmul(a, b, s, n, k, m, Policy::kSerial);
  matmul(a, b, p, n, k, m, Policy::kParallel);
  reference::matmul(a, b, r, n, k, m);
  EXPECT_EQ(s, p);
  EXPECT_EQ(s, r);
}

TEST_F(KernelsTest, MatmulNTAgreesBitwise) {
  const std::size_t n = 70, k = 64, m = 66;
  const auto a = random_values(n * k, 3), b = random_values(m * k, 4);
  std::vector<double> s(n * m), p(n * m), r(n * m);
  matmul_nt(a, b, s, n, k, m, Policy::kSerial);
  matmul_nt(a, b, p, n, k, m, Policy::kParallel);
  reference::matmul_nt(a, b, r, n, k, m);
  EXPECT_EQ(s, p);
  EXPECT_EQ(s, r);
}

TEST_F(KernelsTest, MatmulTNAgreesBitwise) {
  const std::size_t n = 64, k = 72, m = 65;
  const auto a = random_values(k * n, 5), b = random_values(k * m, 6);
  std::vector<double> s(n * m), p(n * m), r(n * m);
  matmul_tn(a, b, s, n, k, m, Policy::kSerial);
  matmul_tn(a, b, p, n, k, m, Policy::kParallel);
  reference::matmul_tn(a, b, r, n, k, m);
  EXPECT_EQ(s, p);
  EXPECT_EQ(s, r);
}

TEST_F(KernelsTest, MatmulSmallHandComputed) {
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4, 0.0);
  matmul(a, b, c, 2, 2, 2);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
}

// Straightforward softmax(QKᵀ/√dh)V for one head at a time.
std::vector<double> naive_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v,
                                    const std::vector<std::uint8_t>& mask,
                                    const AttentionShape& s) {
  const std::size_t dh = s.head_dim();
  std::vector<double> out(s.batch * s.query_len * s.d_model, 0.0);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t i = 0; i < s.query_len; ++i) {
        std::vector<double> w(s.key_len, 0.0);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < s.key_len; ++j) {
          if (!mask[b * s.key_len + j] || (s.causal && j > i)) continue;
          double dot = 0;
          for (std::size_t t = 0; t < dh; ++t)
            dot += q[(b * s.query_len + i) * s.d_model + h * dh + t] *
                   k[(b * s.key_len + j) * s.d_model + h * dh + t];
          w[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < s.key_len; ++j) {
          if (!mask[b * s.key_len + j] || (s.causal && j > i)) {
            w[j] = 0;
            continue;
          }
          w[j] = std::exp(w[j] - mx);
          z += w[j];
        }
        for (std::size_t j = 0; j < s.key_len; ++j)
          for (std::size_t t = 0; t < dh; ++t)
            out[(b * s.query_len + i) * s.d_model + h * dh + t] +=
                w[j] / z * v[(b * s.key_len + j) * s.d_model + h * dh + t];
      }
  return out;
}

void check_attention(bool causal) {
  AttentionShape s;
  s.batch = 3;
  s.query_len = s.key_len = 24;
  s.heads = 4;
  s.d_model = 32;
  s.causal = causal;
  const std::size_t rows = s.batch * s.query_len;
  const auto q = random_values(rows * s.d_model, 7), k = random_values(rows * s.d_model, 8),
             v = random_values(rows * s.d_model, 9), d = random_values(rows * s.d_model, 10);
  std::vector<std::uint8_t> mask(s.batch * s.key_len, 1);
  for (std::size_t j = 20; j < s.key_len; ++j) mask[1 * s.key_len + j] = 0;

  std::vector<double> os(rows * s.d_model), op(rows * s.d_model);
  std::vector<double> ps(s.probs_size()), pp(s.probs_size());
  attention_forward(q, k, v, mask, s, os, ps, Policy::kSerial);
  attention_forward(q, k, v, mask, s, op, pp, Policy::kParallel);
  EXPECT_EQ(os, op);
  EXPECT_EQ(ps, pp);

  const auto oracle = naive_attention(q, k, v, mask, s);
  for (std::size_t i = 0; i < oracle.size(); ++i) ASSERT_NEAR(os[i], oracle[i], 1e-12) << i;

  // Masked keys carry exactly zero weight.
  for (std::size_t h = 0; h < s.heads; ++h)
    for (std::size_t i = 0; i < s.query_len; ++i)
      for (std::size_t j = 20; j < s.key_len; ++j)
        EXPECT_EQ(ps[((1 * s.heads + h) * s.query_len + i) * s.key_len + j], 0.0);

  std::vector<double> dqs(q.size()), dks(q.size()), dvs(q.size());
  std::vector<double> dqp(q.size()), dkp(q.size()), dvp(q.size());
  attention_backward(q, k, v, ps, d, s, dqs, dks, dvs, Policy::kSerial);
  attention_backward(q, k, v, pp, d, s, dqp, dkp, dvp, Policy::kParallel);
  EXPECT_EQ(dqs, dqp);
  EXPECT_EQ(dks, dkp);
  EXPECT_EQ(dvs, dvp);
}

TEST_F(KernelsTest, AttentionMatchesNaiveAndPoliciesAgree) { check_attention(false); }
TEST_F(KernelsTest, CausalAttentionMatchesNaiveAndPoliciesAgree) { check_attention(true); }

TEST_F(KernelsTest, DefaultPolicyRoundTrips) {
  const auto before = default_policy();
  set_default_policy(Policy::kSerial);
  EXPECT_EQ(default_policy(), Policy::kSerial);
  set_default_policy(before);
  EXPECT_GE(max_threads(), 1);
}

}  // namespace
