// Quick GEMM throughput probe for sizing training runs on the build machine.

#include <chrono>
#include <cstdio>
#include <vector>

#include "lce/ops.hpp"
#include "lce/rng.hpp"

using lce::index_t;

int main() {
  const index_t M = 64, N = 4096, K = 576;  // conv-shaped: Cout x HW x Cin*k*k
  std::vector<float> a(static_cast<size_t>(M * K)), b(static_cast<size_t>(K * N)),
      c(static_cast<size_t>(M * N));
  lce::Rng rng(7);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  const int reps = 40;
  for (int variant = 0; variant < 3; ++variant) {
    const char* name = variant == 0 ? "nn" : (variant == 1 ? "nt" : "tn");
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
      if (variant == 0)
        lce::detail::gemm_nn(M, N, K, a.data(), b.data(), c.data());
      else if (variant == 1)
        lce::detail::gemm_nt(M, N, K, a.data(), b.data(), c.data());
      else
        lce::detail::gemm_tn(N, M, K, b.data(), a.data(), c.data());
    }
    auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    const double flops = 2.0 * static_cast<double>(M) * N * K * reps;
    std::printf("gemm_%s: %.2f GFLOP/s (%.1f ms/rep)\n", name, flops / sec / 1e9,
                sec / reps * 1e3);
  }
  std::printf("checksum %.6f\n", static_cast<double>(c[0]));
  return 0;
}
