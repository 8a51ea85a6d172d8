#pragma once

#include <cstdint>

namespace cfd::kernels {

// Geometry of one conv2d call. Output extents are derived once and reused by
// the forward and all three backward kernels.
struct Conv2dDims {
  std::int64_t n = 0;     // batch
  std::int64_t cin = 0;   // input channels
  std::int64_t h = 0;     // input height
  std::int64_t w = 0;     // input width
  std::int64_t cout = 0;  // output channels
  std::int64_t kh = 0;    // kernel height
  std::int64_t kw = 0;    // kernel width
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t oh = 0;    // output height
  std::int64_t ow = 0;    // output width
};

enum class Backend { kSerial, kParallel };

// Process-wide kernel backend. Defaults to kParallel when built with OpenMP.
Backend active_backend();
void set_active_backend(Backend b);

// Serial reference kernels: direct nested loops, zero padding, standard
// cross-correlation. These are the oracle the parallel kernels are tested
// against and are kept deliberately naive.
namespace serial {

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d);

// y[n,k] = b[k] + sum_d x[n,d] * w[k,d]
void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout);
void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout);

// y[n,c] = mean over (h,w) of x[n,c,h,w]
void avgpool_forward(const double* x, double* y, std::int64_t n,
                     std::int64_t c, std::int64_t h, std::int64_t w);
void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w);

}  // namespace serial

// OpenMP kernels. Every output element is produced by exactly one iteration
// with the same inner summation order as the serial reference, so results are
// bit-identical to serial regardless of thread count or schedule.
namespace par {

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d);

void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout);
void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout);

void avgpool_forward(const double* x, double* y, std::int64_t n,
                     std::int64_t c, std::int64_t h, std::int64_t w);
void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w);

}  // namespace par

// Dispatching wrappers used by the tensor engine; route to the active backend.
void conv2d_forward(const double* x, const double* w, const double* b,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* gout, const double* w, double* gx,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gout, const double* x, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d);
void dense_forward(const double* x, const double* w, const double* b,
                   double* y, std::int64_t n, std::int64_t din,
                   std::int64_t dout);
void dense_backward_input(const double* gy, const double* w, double* gx,
                          std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_weight(const double* gy, const double* x, double* gw,
                           std::int64_t n, std::int64_t din, std::int64_t dout);
void dense_backward_bias(const double* gy, double* gb, std::int64_t n,
                         std::int64_t dout);
void avgpool_forward(const double* x, double* y, std::int64_t n,
                     std::int64_t c, std::int64_t h, std::int64_t w);
void avgpool_backward(const double* gy, double* gx, std::int64_t n,
                      std::int64_t c, std::int64_t h, std::int64_t w);

}  // namespace cfd::kernels
