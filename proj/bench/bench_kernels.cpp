// Serial vs OpenMP kernel timings. Usage: bench_kernels [repeats]
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include <omp.h>

#include "eaxl/kernels.hpp"
#include "eaxl/rng.hpp"

namespace k = eaxl::kernels;
using eaxl::Scalar;

namespace {

double time_ms(int repeats, const std::function<void()>& f) {
  f();  // warm up
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() /
         repeats;
}

std::vector<Scalar> random_vec(std::size_t n, eaxl::Rng& rng) {
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform(-1, 1));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  eaxl::Rng rng(7);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-12s %-16s %12s %12s %8s\n", "kernel", "shape", "serial ms", "parallel ms", "speedup");
  for (std::size_t n : {64, 128, 256, 512}) {
    const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<Scalar> out(n * n);
    char shape[32];
    std::snprintf(shape, sizeof shape, "%zux%zux%zu", n, n, n);
    const double s = time_ms(repeats, [&] { k::serial::matmul(a.data(), b.data(), out.data(), n, n, n); });
    const double p = time_ms(repeats, [&] { k::parallel::matmul(a.data(), b.data(), out.data(), n, n, n); });
    std::printf("%-12s %-16s %12.3f %12.3f %8.2f\n", "matmul", shape, s, p, s / p);
    const double snt = time_ms(repeats, [&] { k::serial::matmul_nt(a.data(), b.data(), out.data(), n, n, n); });
    const double pnt = time_ms(repeats, [&] { k::parallel::matmul_nt(a.data(), b.data(), out.data(), n, n, n); });
    std::printf("%-12s %-16s %12.3f %12.3f %8.2f\n", "matmul_nt", shape, snt, pnt, snt / pnt);
  }
  for (std::size_t rows : {256, 4096}) {
    const std::size_t cols = 512;
    const auto x = random_vec(rows * cols, rng);
    std::vector<Scalar> out(rows * cols);
    char shape[32];
    std::snprintf(shape, sizeof shape, "%zux%zu", rows, cols);
    const double s = time_ms(repeats, [&] { k::serial::softmax_rows(x.data(), out.data(), rows, cols); });
    const double p = time_ms(repeats, [&] { k::parallel::softmax_rows(x.data(), out.data(), rows, cols); });
    std::printf("%-12s %-16s %12.3f %12.3f %8.2f\n", "softmax", shape, s, p, s / p);
  }
}
