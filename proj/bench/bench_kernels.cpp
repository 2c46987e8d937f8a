// Serial vs OpenMP timings for the dense kernels and corpus ROUGE.

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "mtfc/kernels.hpp"
#include "mtfc/metrics.hpp"

namespace {

using mtfc::kernels::Policy;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

Policy policy_of(const benchmark::State& state) {
  return state.range(1) == 0 ? Policy::kSerial : Policy::kParallel;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    mtfc::kernels::matmul(a, b, c, n, n, n, policy_of(state));
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 3), b = random_matrix(n * n, 4);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    mtfc::kernels::matmul_nt(a, b, c, n, n, n, policy_of(state));
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    mtfc::kernels::reference::matmul(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}

void BM_Attention(benchmark::State& state) {
  mtfc::kernels::AttentionShape s;
  s.batch = 8;
  s.query_len = s.key_len = static_cast<std::size_t>(state.range(0));
  s.heads = 4;
  s.d_model = 64;
  const std::size_t rows = s.batch * s.query_len;
  const auto q = random_matrix(rows * s.d_model, 5), k = random_matrix(rows * s.d_model, 6),
             v = random_matrix(rows * s.d_model, 7), d = random_matrix(rows * s.d_model, 8);
  std::vector<std::uint8_t> mask(s.batch * s.key_len, 1);
  std::vector<double> out(rows * s.d_model), probs(s.probs_size());
  std::vector<double> dq(out.size()), dk(out.size()), dv(out.size());
  for (auto _ : state) {
    std::fill(out.begin(), out.end(), 0.0);
    mtfc::kernels::attention_forward(q, k, v, mask, s, out, probs, policy_of(state));
    mtfc::kernels::attention_backward(q, k, v, probs, d, s, dq, dk, dv, policy_of(state));
    benchmark::DoNotOptimize(dv.data());
  }
}

void BM_CorpusRouge(benchmark::State& state) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> word(0, 200), len(20, 60);
  std::vector<std::string> cands, refs;
  for (int i = 0; i < state.range(0); ++i) {
    for (auto* v : {&cands, &refs}) {
      std::string s;
      const int n = len(rng);
      for (int t = 0; t < n; ++t) s += "w" + std::to_string(word(rng)) + " ";
      v->push_back(std::move(s));
    }
  }
  for (auto _ : state) {
    auto r = mtfc::metrics::corpus_rouge(cands, refs, {}, policy_of(state));
    benchmark::DoNotOptimize(r);
  }
}

}  // namespace

BENCHMARK(BM_Matmul)->ArgsProduct({{64, 128, 256}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_MatmulNT)->ArgsProduct({{64, 128, 256}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_MatmulReference)->Arg(64)->Arg(128)->Arg(256)->ArgName("n");
BENCHMARK(BM_Attention)->ArgsProduct({{32, 128}, {0, 1}})->ArgNames({"len", "parallel"});
BENCHMARK(BM_CorpusRouge)->ArgsProduct({{200, 1000}, {0, 1}})->ArgNames({"pairs", "parallel"});

BENCHMARK_MAIN();
