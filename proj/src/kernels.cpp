#include "cfd/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfd::kernels {

namespace {

#ifdef _OPENMP
Backend g_backend = Backend::kParallel;
#else
Backend g_backend = Backend::kSerial;
#endif

inline std::int64_t idx4(std::int64_t a, std::int64_t b, std::int64_t c,
                         std::int64_t d, std::int64_t eb, std::int64_t ec,
                         std::int64_t ed) {
  return ((a * eb + b) * ec + c) * ed + d;
}

}  // namespace

Backend active_backend() { return g_backend; }
void set_active_backend(Backend b) { g_backend = b; }

// ---------------------------------------------------------------------------
// Serial reference
// ---------------------------------------------------------------------------

namespace serial {

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.cout; ++co)
      for (std::int64_t oh = 0; oh < d.oh; ++oh)
        for (std::int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = b ? b[co] : 0.0;
          for (std::int64_t ci = 0; ci < d.cin; ++ci)
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] *
                       w[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)];
              }
            }
          out[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] = acc;
        }
}

void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d) {
  // Gather form: each input cell sums the output cells it contributed to.
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t ih = 0; ih < d.h; ++ih)
        for (std::int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t th = ih + d.pad - kh;
              if (th < 0 || th % d.stride != 0) continue;
              const std::int64_t oh = th / d.stride;
              if (oh >= d.oh) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t tw = iw + d.pad - kw;
                if (tw < 0 || tw % d.stride != 0) continue;
                const std::int64_t ow = tw / d.stride;
                if (ow >= d.ow) continue;
                acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] *
                       w[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)];
              }
            }
          gx[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] = acc;
        }
}

void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d) {
  for (std::int64_t co = 0; co < d.cout; ++co)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t kh = 0; kh < d.kh; ++kh)
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < d.n; ++n)
            for (std::int64_t oh = 0; oh < d.oh; ++oh) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] *
                       x[idx4(n, ci, ih, iw, d.cin, d.h, d.w)];
              }
            }
          gw[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)] = acc;
        }
}

void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d) {
  for (std::int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < d.n; ++n)
      for (std::int64_t oh = 0; oh < d.oh; ++oh)
        for (std::int64_t ow = 0; ow < d.ow; ++ow)
          acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)];
    gb[co] = acc;
  }
}

void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < dout; ++k) {
      double acc = b ? b[k] : 0.0;
      for (std::int64_t j = 0; j < din; ++j) acc += x[i * din + j] * w[k * din + j];
      y[i * dout + k] = acc;
    }
}

void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < din; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < dout; ++k) acc += gy[i * dout + k] * w[k * din + j];
      gx[i * din + j] = acc;
    }
}

void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout) {
  for (std::int64_t k = 0; k < dout; ++k)
    for (std::int64_t j = 0; j < din; ++j) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) acc += gy[i * dout + k] * x[i * din + j];
      gw[k * din + j] = acc;
    }
}

void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout) {
  for (std::int64_t k = 0; k < dout; ++k) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += gy[i * dout + k];
    gb[k] = acc;
  }
}

void avgpool_forward(const double* x, double* y, std::int64_t n, std::int64_t c,
                     std::int64_t h, std::int64_t w) {
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      const double* p = x + (i * c + ch) * h * w;
      for (std::int64_t s = 0; s < h * w; ++s) acc += p[s];
      y[i * c + ch] = acc * inv;
    }
}

void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w) {
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double g = gy[i * c + ch] * inv;
      double* p = gx + (i * c + ch) * h * w;
      for (std::int64_t s = 0; s < h * w; ++s) p[s] = g;
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Inner summation order matches the serial reference exactly;
// the pragmas only distribute independent output elements across threads.
// ---------------------------------------------------------------------------

namespace par {

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.cout; ++co)
      for (std::int64_t oh = 0; oh < d.oh; ++oh)
        for (std::int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = b ? b[co] : 0.0;
          for (std::int64_t ci = 0; ci < d.cin; ++ci)
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] *
                       w[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)];
              }
            }
          out[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] = acc;
        }
}

void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t ih = 0; ih < d.h; ++ih)
        for (std::int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t th = ih + d.pad - kh;
              if (th < 0 || th % d.stride != 0) continue;
              const std::int64_t oh = th / d.stride;
              if (oh >= d.oh) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t tw = iw + d.pad - kw;
                if (tw < 0 || tw % d.stride != 0) continue;
                const std::int64_t ow = tw / d.stride;
                if (ow >= d.ow) continue;
                acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] *
                       w[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)];
              }
            }
          gx[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] = acc;
        }
}

void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t co = 0; co < d.cout; ++co)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t kh = 0; kh < d.kh; ++kh)
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < d.n; ++n)
            for (std::int64_t oh = 0; oh < d.oh; ++oh) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)] *
                       x[idx4(n, ci, ih, iw, d.cin, d.h, d.w)];
              }
            }
          gw[idx4(co, ci, kh, kw, d.cin, d.kh, d.kw)] = acc;
        }
}

void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d) {
#pragma omp parallel for schedule(static)
  for (std::int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < d.n; ++n)
      for (std::int64_t oh = 0; oh < d.oh; ++oh)
        for (std::int64_t ow = 0; ow < d.ow; ++ow)
          acc += gout[idx4(n, co, oh, ow, d.cout, d.oh, d.ow)];
    gb[co] = acc;
  }
}

void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < dout; ++k) {
      double acc = b ? b[k] : 0.0;
      for (std::int64_t j = 0; j < din; ++j) acc += x[i * din + j] * w[k * din + j];
      y[i * dout + k] = acc;
    }
}

void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < din; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < dout; ++k) acc += gy[i * dout + k] * w[k * din + j];
      gx[i * din + j] = acc;
    }
}

void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t k = 0; k < dout; ++k)
    for (std::int64_t j = 0; j < din; ++j) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) acc += gy[i * dout + k] * x[i * din + j];
      gw[k * din + j] = acc;
    }
}

void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout) {
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < dout; ++k) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += gy[i * dout + k];
    gb[k] = acc;
  }
}

void avgpool_forward(const double* x, double* y, std::int64_t n, std::int64_t c,
                     std::int64_t h, std::int64_t w) {
  const double inv = 1.0 / static_cast<double>(h * w);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      const double* p = x + (i * c + ch) * h * w;
      for (std::int64_t s = 0; s < h * w; ++s) acc += p[s];
      y[i * c + ch] = acc * inv;
    }
}

void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w) {
  const double inv = 1.0 / static_cast<double>(h * w);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double g = gy[i * c + ch] * inv;
      double* p = gx + (i * c + ch) * h * w;
      for (std::int64_t s = 0; s < h * w; ++s) p[s] = g;
    }
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

#define CFD_DISPATCH(fn, ...)                     \
  do {                                            \
    if (g_backend == Backend::kParallel)          \
      par::fn(__VA_ARGS__);                       \
    else                                          \
      serial::fn(__VA_ARGS__);                    \
  } while (0)

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d) {
  CFD_DISPATCH(conv2d_forward, x, w, b, out, d);
}
void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d) {
  CFD_DISPATCH(conv2d_backward_input, gout, w, gx, d);
}
void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d) {
  CFD_DISPATCH(conv2d_backward_weight, gout, x, gw, d);
}
void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d) {
  CFD_DISPATCH(conv2d_backward_bias, gout, gb, d);
}
void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout) {
  CFD_DISPATCH(dense_forward, x, w, b, y, n, din, dout);
}
void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout) {
  CFD_DISPATCH(dense_backward_input, gy, w, gx, n, din, dout);
}
void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout) {
  CFD_DISPATCH(dense_backward_weight, gy, x, gw, n, din, dout);
}
void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout) {
  CFD_DISPATCH(dense_backward_bias, gy, gb, n, dout);
}
void avgpool_forward(const double* x, double* y, std::int64_t n, std::int64_t c,
                     std::int64_t h, std::int64_t w) {
  CFD_DISPATCH(avgpool_forward, x, y, n, c, h, w);
}
void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w) {
  CFD_DISPATCH(avgpool_backward, gy, gx, n, c, h, w);
}

#undef CFD_DISPATCH

}  // namespace cfd::kernels
