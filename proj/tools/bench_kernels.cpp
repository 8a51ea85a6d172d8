// Benchmark comparing the serial reference kernels against the OpenMP
// versions on training-shaped workloads, and verifying they agree.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "cfd/kernels.hpp"
#include "cfd/rng.hpp"

namespace {

using cfd::kernels::Conv2dDims;

double time_of(const std::function<void()>& fn, int reps) {
  // one warmup rep
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
             .count() /
         reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> randu(std::size_t n, cfd::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void bench_conv(const char* label, const Conv2dDims& d, int reps, cfd::Rng& rng) {
  const auto x = randu(static_cast<std::size_t>(d.n * d.cin * d.h * d.w), rng);
  const auto w = randu(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), rng);
  const auto b = randu(static_cast<std::size_t>(d.cout), rng);
  std::vector<double> out_s(static_cast<std::size_t>(d.n * d.cout * d.oh * d.ow));
  std::vector<double> out_p(out_s.size());

  const double ts = time_of(
      [&] { cfd::kernels::serial::conv2d_forward(x.data(), w.data(), b.data(), out_s.data(), d); },
      reps);
  const double tp = time_of(
      [&] { cfd::kernels::par::conv2d_forward(x.data(), w.data(), b.data(), out_p.data(), d); },
      reps);
  std::printf("%-28s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   maxdiff %.3g\n",
              label, ts * 1e3, tp * 1e3, ts / tp, max_abs_diff(out_s, out_p));
}

void bench_dense(const char* label, std::int64_t n, std::int64_t din,
                 std::int64_t dout, int reps, cfd::Rng& rng) {
  const auto x = randu(static_cast<std::size_t>(n * din), rng);
  const auto w = randu(static_cast<std::size_t>(dout * din), rng);
  const auto b = randu(static_cast<std::size_t>(dout), rng);
  std::vector<double> y_s(static_cast<std::size_t>(n * dout)), y_p(y_s.size());
  const double ts = time_of(
      [&] { cfd::kernels::serial::dense_forward(x.data(), w.data(), b.data(), y_s.data(), n, din, dout); },
      reps);
  const double tp = time_of(
      [&] { cfd::kernels::par::dense_forward(x.data(), w.data(), b.data(), y_p.data(), n, din, dout); },
      reps);
  std::printf("%-28s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   maxdiff %.3g\n",
              label, ts * 1e3, tp * 1e3, ts / tp, max_abs_diff(y_s, y_p));
}

Conv2dDims make_dims(std::int64_t n, std::int64_t cin, std::int64_t hw,
                     std::int64_t cout, std::int64_t stride) {
  Conv2dDims d;
  d.n = n;
  d.cin = cin;
  d.h = hw;
  d.w = hw;
  d.cout = cout;
  d.kh = 3;
  d.kw = 3;
  d.stride = stride;
  d.pad = 1;
  d.oh = (d.h + 2 - 3) / stride + 1;
  d.ow = (d.w + 2 - 3) / stride + 1;
  return d;
}

}  // namespace

int main() {
  cfd::Rng rng(7);
  std::printf("conv2d / dense forward, serial reference vs OpenMP\n\n");
  bench_conv("conv 16x1x32x32 -> 8 s2", make_dims(16, 1, 32, 8, 2), 20, rng);
  bench_conv("conv 16x8x16x16 -> 16 s2", make_dims(16, 8, 16, 16, 2), 20, rng);
  bench_conv("conv 16x16x8x8 -> 16 s1", make_dims(16, 16, 8, 16, 1), 20, rng);
  bench_conv("conv 8x160x7x7 -> 160 s1", make_dims(8, 160, 7, 160, 1), 3, rng);
  bench_dense("dense 256x160 -> 64", 256, 160, 64, 50, rng);
  bench_dense("dense 1024x512 -> 256", 1024, 512, 256, 5, rng);
  return 0;
}
