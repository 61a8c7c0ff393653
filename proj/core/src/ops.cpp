#include "asfp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace asfp {

std::string shape_string(std::span<const int> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw shape_error(std::string(op) + ": " + what + " must be rank " +
                      std::to_string(rank) + ", got " + shape_string(t.shape()));
}

// Output positions o with 0 <= o*stride + tap - pad < extent, clipped to
// [0, out_extent). Returns {lo, hi} inclusive; hi < lo means empty.
struct TapRange {
  int lo;
  int hi;
};

TapRange tap_range(int extent, int pad, int tap, int stride, int out_extent) {
  int lo = 0;
  const int shift = pad - tap;
  if (shift > 0) lo = (shift + stride - 1) / stride;
  const int hi_num = extent - 1 + pad - tap;
  int hi = hi_num < 0 ? -1 : hi_num / stride;
  if (hi > out_extent - 1) hi = out_extent - 1;
  return {lo, hi};
}

struct ConvDims {
  int n, ci, h, w;
  int co, kh, kw;
  int oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& weight, int stride, int pad) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (input.extent(1) != weight.extent(1))
    throw shape_error("conv2d: input channels do not match weight channels; input " +
                      shape_string(input.shape()) + " vs weight " +
                      shape_string(weight.shape()));
  if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
  if (pad < 0) throw shape_error("conv2d: pad must be >= 0");
  ConvDims d{};
  d.n = input.extent(0);
  d.ci = input.extent(1);
  d.h = input.extent(2);
  d.w = input.extent(3);
  d.co = weight.extent(0);
  d.kh = weight.extent(2);
  d.kw = weight.extent(3);
  if (d.h + 2 * pad - d.kh < 0 || d.w + 2 * pad - d.kw < 0)
    throw shape_error("conv2d: kernel exceeds padded input; input " +
                      shape_string(input.shape()) + " vs weight " +
                      shape_string(weight.shape()));
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int pad) {
  const ConvDims d = conv_dims(input, weight, stride, pad);
  Tensor<T> out({d.n, d.co, d.oh, d.ow});

  const T* in_p = input.data();
  const T* w_p = weight.data();
  T* out_p = out.data();
  const std::int64_t in_cs = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t in_ns = in_cs * d.ci;
  const std::int64_t out_cs = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t out_ns = out_cs * d.co;

  for (int n = 0; n < d.n; ++n) {
    for (int oc = 0; oc < d.co; ++oc) {
      T* out_ch = out_p + n * out_ns + oc * out_cs;
      for (int ic = 0; ic < d.ci; ++ic) {
        const T* in_ch = in_p + n * in_ns + ic * in_cs;
        const T* w_k = w_p + (static_cast<std::int64_t>(oc) * d.ci + ic) * d.kh * d.kw;
        for (int r = 0; r < d.kh; ++r) {
          const TapRange rows = tap_range(d.h, pad, r, stride, d.oh);
          for (int c = 0; c < d.kw; ++c) {
            const T wv = w_k[r * d.kw + c];
            const TapRange cols = tap_range(d.w, pad, c, stride, d.ow);
            const int count = cols.hi - cols.lo + 1;
            if (count <= 0) continue;
            for (int oy = rows.lo; oy <= rows.hi; ++oy) {
              const std::int64_t iy = static_cast<std::int64_t>(oy) * stride + r - pad;
              const T* in_row = in_ch + iy * d.w + (cols.lo * stride + c - pad);
              T* out_row = out_ch + static_cast<std::int64_t>(oy) * d.ow + cols.lo;
              if (stride == 1) {
                for (int i = 0; i < count; ++i) out_row[i] += wv * in_row[i];
              } else {
                for (int i = 0; i < count; ++i)
                  out_row[i] += wv * in_row[static_cast<std::int64_t>(i) * stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrad<T> conv2d_grad(const Tensor<T>& input, const Tensor<T>& weight,
                        const Tensor<T>& d_output, int stride, int pad) {
  const ConvDims d = conv_dims(input, weight, stride, pad);
  const std::vector<int> want{d.n, d.co, d.oh, d.ow};
  if (d_output.shape() != want)
    throw shape_error("conv2d_grad: d_output " + shape_string(d_output.shape()) +
                      " does not match forward output " + shape_string(want));

  ConvGrad<T> g{Tensor<T>({d.n, d.ci, d.h, d.w}), Tensor<T>({d.co, d.ci, d.kh, d.kw})};

  const T* in_p = input.data();
  const T* w_p = weight.data();
  const T* dout_p = d_output.data();
  T* din_p = g.d_input.data();
  T* dw_p = g.d_weight.data();
  const std::int64_t in_cs = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t in_ns = in_cs * d.ci;
  const std::int64_t out_cs = static_cast<std::int64_t>(d.oh) * d.ow;
  const std::int64_t out_ns = out_cs * d.co;

  for (int n = 0; n < d.n; ++n) {
    for (int oc = 0; oc < d.co; ++oc) {
      const T* dout_ch = dout_p + n * out_ns + oc * out_cs;
      for (int ic = 0; ic < d.ci; ++ic) {
        const T* in_ch = in_p + n * in_ns + ic * in_cs;
        T* din_ch = din_p + n * in_ns + ic * in_cs;
        const std::int64_t w_base = (static_cast<std::int64_t>(oc) * d.ci + ic) * d.kh * d.kw;
        for (int r = 0; r < d.kh; ++r) {
          const TapRange rows = tap_range(d.h, pad, r, stride, d.oh);
          for (int c = 0; c < d.kw; ++c) {
            const TapRange cols = tap_range(d.w, pad, c, stride, d.ow);
            const int count = cols.hi - cols.lo + 1;
            if (count <= 0) continue;
            const T wv = w_p[w_base + r * d.kw + c];
            T acc = T{0};
            for (int oy = rows.lo; oy <= rows.hi; ++oy) {
              const std::int64_t iy = static_cast<std::int64_t>(oy) * stride + r - pad;
              const std::int64_t ix0 = static_cast<std::int64_t>(cols.lo) * stride + c - pad;
              const T* in_row = in_ch + iy * d.w + ix0;
              T* din_row = din_ch + iy * d.w + ix0;
              const T* dout_row = dout_ch + static_cast<std::int64_t>(oy) * d.ow + cols.lo;
              if (stride == 1) {
                for (int i = 0; i < count; ++i) {
                  din_row[i] += wv * dout_row[i];
                  acc += dout_row[i] * in_row[i];
                }
              } else {
                for (int i = 0; i < count; ++i) {
                  din_row[static_cast<std::int64_t>(i) * stride] += wv * dout_row[i];
                  acc += dout_row[i] * in_row[static_cast<std::int64_t>(i) * stride];
                }
              }
            }
            dw_p[w_base + r * d.kw + c] += acc;
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
BatchNormOut<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, Tensor<T>& running_mean,
                          Tensor<T>& running_var, T eps, T momentum, bool training) {
  require_rank(input, 4, "batchnorm", "input");
  const int n = input.extent(0), ch = input.extent(1), h = input.extent(2),
            w = input.extent(3);
  const std::vector<int> per_channel{ch};
  const Tensor<T>* per_channel_params[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* t : per_channel_params) {
    if (t->shape() != per_channel)
      throw shape_error("batchnorm: per-channel parameter " + shape_string(t->shape()) +
                        " does not match input channels " + shape_string(input.shape()));
  }
  if (!(eps > T{0})) throw config_error("batchnorm: eps must be > 0");
  if (n < 1) throw shape_error("batchnorm: empty batch");

  BatchNormOut<T> r;
  r.output = Tensor<T>({n, ch, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t chan_stride = static_cast<std::int64_t>(ch) * plane;
  const T* in_p = input.data();
  T* out_p = r.output.data();

  if (training) {
    r.mean = Tensor<T>({ch});
    r.var = Tensor<T>({ch});
    const std::int64_t m = static_cast<std::int64_t>(n) * plane;
    for (int c = 0; c < ch; ++c) {
      double sum = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = in_p + b * chan_stride + c * plane;
        for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
      }
      const double mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = in_p + b * chan_stride + c * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double dev = static_cast<double>(p[i]) - mean;
          sq += dev * dev;
        }
      }
      const double var = sq / static_cast<double>(m);
      r.mean(c) = static_cast<T>(mean);
      r.var(c) = static_cast<T>(var);

      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const T g = gamma(c), b0 = beta(c), mu = static_cast<T>(mean);
      for (int b = 0; b < n; ++b) {
        const T* p = in_p + b * chan_stride + c * plane;
        T* q = out_p + b * chan_stride + c * plane;
        for (std::int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * inv_std + b0;
      }

      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1)
                                    : var;
      running_mean(c) =
          static_cast<T>((1.0 - static_cast<double>(momentum)) * running_mean(c) +
                         static_cast<double>(momentum) * mean);
      running_var(c) =
          static_cast<T>((1.0 - static_cast<double>(momentum)) * running_var(c) +
                         static_cast<double>(momentum) * unbiased);
    }
  } else {
    for (int c = 0; c < ch; ++c) {
      const T inv_std =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var(c)) +
                                         static_cast<double>(eps)));
      const T g = gamma(c), b0 = beta(c), mu = running_mean(c);
      for (int b = 0; b < n; ++b) {
        const T* p = in_p + b * chan_stride + c * plane;
        T* q = out_p + b * chan_stride + c * plane;
        for (std::int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * inv_std + b0;
      }
    }
  }
  return r;
}

template <typename T>
BatchNormGrad<T> batchnorm_grad(const Tensor<T>& input, const Tensor<T>& gamma,
                                const Tensor<T>& mean, const Tensor<T>& var, T eps,
                                const Tensor<T>& d_output) {
  require_rank(input, 4, "batchnorm_grad", "input");
  if (!input.same_shape(d_output))
    throw shape_error("batchnorm_grad: d_output " + shape_string(d_output.shape()) +
                      " does not match input " + shape_string(input.shape()));
  const int n = input.extent(0), ch = input.extent(1), h = input.extent(2),
            w = input.extent(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t chan_stride = static_cast<std::int64_t>(ch) * plane;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  BatchNormGrad<T> g{Tensor<T>({n, ch, h, w}), Tensor<T>({ch}), Tensor<T>({ch})};
  const T* in_p = input.data();
  const T* dout_p = d_output.data();
  T* din_p = g.d_input.data();

  for (int c = 0; c < ch; ++c) {
    const double mu = static_cast<double>(mean(c));
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(var(c)) +
                                           static_cast<double>(eps));
    double sum_dout = 0.0, sum_dout_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* x = in_p + b * chan_stride + c * plane;
      const T* dy = dout_p + b * chan_stride + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mu) * inv_std;
        sum_dout += static_cast<double>(dy[i]);
        sum_dout_xhat += static_cast<double>(dy[i]) * xhat;
      }
    }
    g.d_beta(c) = static_cast<T>(sum_dout);
    g.d_gamma(c) = static_cast<T>(sum_dout_xhat);

    const double gm = static_cast<double>(gamma(c));
    const double mean_dout = sum_dout / static_cast<double>(m);
    const double mean_dout_xhat = sum_dout_xhat / static_cast<double>(m);
    for (int b = 0; b < n; ++b) {
      const T* x = in_p + b * chan_stride + c * plane;
      const T* dy = dout_p + b * chan_stride + c * plane;
      T* dx = din_p + b * chan_stride + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (static_cast<double>(x[i]) - mu) * inv_std;
        dx[i] = static_cast<T>(gm * inv_std *
                               (static_cast<double>(dy[i]) - mean_dout - xhat * mean_dout_xhat));
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& input, const Tensor<T>& d_output) {
  if (!input.same_shape(d_output))
    throw shape_error("relu_grad: d_output " + shape_string(d_output.shape()) +
                      " does not match input " + shape_string(input.shape()));
  Tensor<T> out(input.shape());
  const T* x = input.data();
  const T* dy = d_output.data();
  T* dx = out.data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return out;
}

template <typename T>
MaxPoolOut<T> max_pool2(const Tensor<T>& input) {
  require_rank(input, 4, "max_pool2", "input");
  const int n = input.extent(0), ch = input.extent(1), h = input.extent(2),
            w = input.extent(3);
  if (h < 2 || w < 2)
    throw shape_error("max_pool2: spatial extents must be >= 2, got " +
                      shape_string(input.shape()));
  const int oh = (h - 2) / 2 + 1, ow = (w - 2) / 2 + 1;
  MaxPoolOut<T> r;
  r.output = Tensor<T>({n, ch, oh, ow});
  r.argmax.resize(static_cast<std::size_t>(r.output.numel()));
  const T* in_p = input.data();
  T* out_p = r.output.data();
  std::int64_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < ch; ++c) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * ch + c) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const std::int64_t i00 = base + static_cast<std::int64_t>(oy * 2) * w + ox * 2;
          std::int64_t best_i = i00;
          T best = in_p[i00];
          const std::int64_t cand[3] = {i00 + 1, i00 + w, i00 + w + 1};
          for (std::int64_t ci : cand) {
            if (in_p[ci] > best) {
              best = in_p[ci];
              best_i = ci;
            }
          }
          out_p[o] = best;
          r.argmax[static_cast<std::size_t>(o)] = best_i;
          ++o;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> max_pool2_grad(const std::vector<std::int64_t>& argmax,
                         const std::vector<int>& input_shape, const Tensor<T>& d_output) {
  if (static_cast<std::int64_t>(argmax.size()) != d_output.numel())
    throw shape_error("max_pool2_grad: argmax size does not match d_output");
  Tensor<T> out(input_shape);
  const T* dy = d_output.data();
  T* dx = out.data();
  for (std::size_t i = 0; i < argmax.size(); ++i)
    dx[argmax[i]] += dy[static_cast<std::int64_t>(i)];
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const int n = input.extent(0), ch = input.extent(1);
  const std::int64_t plane = static_cast<std::int64_t>(input.extent(2)) * input.extent(3);
  Tensor<T> out({n, ch});
  const T* in_p = input.data();
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < ch; ++c) {
      const T* p = in_p + (static_cast<std::int64_t>(b) * ch + c) * plane;
      double sum = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
      out(b, c) = static_cast<T>(sum / static_cast<double>(plane));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_grad(const std::vector<int>& input_shape,
                               const Tensor<T>& d_output) {
  if (input_shape.size() != 4)
    throw shape_error("global_avg_pool_grad: input shape must be rank 4");
  const int n = input_shape[0], ch = input_shape[1];
  const std::int64_t plane = static_cast<std::int64_t>(input_shape[2]) * input_shape[3];
  if (d_output.shape() != std::vector<int>{n, ch})
    throw shape_error("global_avg_pool_grad: d_output " + shape_string(d_output.shape()) +
                      " does not match [N,C]");
  Tensor<T> out(input_shape);
  T* dx = out.data();
  for (int b = 0; b < n; ++b) {
    for (int c = 0; c < ch; ++c) {
      const T v = d_output(b, c) / static_cast<T>(plane);
      T* p = dx + (static_cast<std::int64_t>(b) * ch + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] = v;
    }
  }
  return out;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input, 2, "affine", "input");
  require_rank(weight, 2, "affine", "weight");
  if (input.extent(1) != weight.extent(1))
    throw shape_error("affine: input features do not match weight; input " +
                      shape_string(input.shape()) + " vs weight " +
                      shape_string(weight.shape()));
  if (bias.shape() != std::vector<int>{weight.extent(0)})
    throw shape_error("affine: bias " + shape_string(bias.shape()) +
                      " does not match weight rows " + shape_string(weight.shape()));
  const int n = input.extent(0), din = input.extent(1), dout = weight.extent(0);
  Tensor<T> out({n, dout});
  for (int b = 0; b < n; ++b) {
    const T* x = input.data() + static_cast<std::int64_t>(b) * din;
    for (int o = 0; o < dout; ++o) {
      const T* w = weight.data() + static_cast<std::int64_t>(o) * din;
      T acc = bias(o);
      for (int i = 0; i < din; ++i) acc += x[i] * w[i];
      out(b, o) = acc;
    }
  }
  return out;
}

template <typename T>
AffineGrad<T> affine_grad(const Tensor<T>& input, const Tensor<T>& weight,
                          const Tensor<T>& d_output) {
  const int n = input.extent(0), din = input.extent(1), dout = weight.extent(0);
  if (d_output.shape() != std::vector<int>{n, dout})
    throw shape_error("affine_grad: d_output " + shape_string(d_output.shape()) +
                      " does not match [N,Dout]");
  AffineGrad<T> g{Tensor<T>({n, din}), Tensor<T>({dout, din}), Tensor<T>({dout})};
  for (int b = 0; b < n; ++b) {
    const T* x = input.data() + static_cast<std::int64_t>(b) * din;
    T* dx = g.d_input.data() + static_cast<std::int64_t>(b) * din;
    for (int o = 0; o < dout; ++o) {
      const T dy = d_output(b, o);
      const T* w = weight.data() + static_cast<std::int64_t>(o) * din;
      T* dw = g.d_weight.data() + static_cast<std::int64_t>(o) * din;
      for (int i = 0; i < din; ++i) {
        dx[i] += dy * w[i];
        dw[i] += dy * x[i];
      }
      g.d_bias(o) += dy;
    }
  }
  return g;
}

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const int n = logits.extent(0), classes = logits.extent(1);
  if (static_cast<int>(labels.size()) != n)
    throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                      " labels for batch of " + std::to_string(n));
  for (int b = 0; b < n; ++b) {
    if (labels[static_cast<std::size_t>(b)] < 0 ||
        labels[static_cast<std::size_t>(b)] >= classes)
      throw index_error("softmax_cross_entropy: label out of range at index " +
                        std::to_string(b) + ": " +
                        std::to_string(labels[static_cast<std::size_t>(b)]));
  }

  SoftmaxLoss<T> r;
  r.d_logits = Tensor<T>({n, classes});
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const T* x = logits.data() + static_cast<std::int64_t>(b) * classes;
    T* dx = r.d_logits.data() + static_cast<std::int64_t>(b) * classes;
    double mx = static_cast<double>(x[0]);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(x[c]));
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(x[c]) - mx);
    const int label = labels[static_cast<std::size_t>(b)];
    total += std::log(denom) - (static_cast<double>(x[label]) - mx);
    for (int c = 0; c < classes; ++c) {
      const double p = std::exp(static_cast<double>(x[c]) - mx) / denom;
      dx[c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

template <typename T>
void sgd_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& velocity, T lr,
                T momentum, T weight_decay) {
  if (!value.same_shape(grad) || !value.same_shape(velocity))
    throw shape_error("sgd_update: value " + shape_string(value.shape()) + ", grad " +
                      shape_string(grad.shape()) + ", velocity " +
                      shape_string(velocity.shape()) + " must all match");
  if (lr < T{0}) throw config_error("sgd_update: lr must be >= 0");
  T* x = value.data();
  const T* g = grad.data();
  T* v = velocity.data();
  const std::int64_t n = value.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * x[i];
    x[i] -= lr * v[i];
  }
}

double grad_check(const std::function<double(const Tensor<double>&)>& f,
                  const Tensor<double>& x, const Tensor<double>& analytic, double eps) {
  std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
  for (std::int64_t i = 0; i < x.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
  return grad_check_coords(f, x, analytic, coords, eps);
}

double grad_check_coords(const std::function<double(const Tensor<double>&)>& f,
                         const Tensor<double>& x, const Tensor<double>& analytic,
                         std::span<const std::int64_t> coords, double eps) {
  if (!(eps > 0.0)) throw config_error("grad_check: eps must be > 0");
  if (!x.same_shape(analytic))
    throw shape_error("grad_check: analytic gradient " + shape_string(analytic.shape()) +
                      " does not match input " + shape_string(x.shape()));
  Tensor<double> probe = x;
  double worst = 0.0;
  for (std::int64_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

#define ASFP_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);            \
  template ConvGrad<T> conv2d_grad<T>(const Tensor<T>&, const Tensor<T>&,                \
                                      const Tensor<T>&, int, int);                       \
  template BatchNormOut<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&,              \
                                        const Tensor<T>&, Tensor<T>&, Tensor<T>&, T, T,  \
                                        bool);                                           \
  template BatchNormGrad<T> batchnorm_grad<T>(const Tensor<T>&, const Tensor<T>&,        \
                                              const Tensor<T>&, const Tensor<T>&, T,     \
                                              const Tensor<T>&);                         \
  template Tensor<T> relu<T>(const Tensor<T>&);                                          \
  template Tensor<T> relu_grad<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template MaxPoolOut<T> max_pool2<T>(const Tensor<T>&);                                 \
  template Tensor<T> max_pool2_grad<T>(const std::vector<std::int64_t>&,                 \
                                       const std::vector<int>&, const Tensor<T>&);       \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                               \
  template Tensor<T> global_avg_pool_grad<T>(const std::vector<int>&, const Tensor<T>&); \
  template Tensor<T> affine<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template AffineGrad<T> affine_grad<T>(const Tensor<T>&, const Tensor<T>&,              \
                                        const Tensor<T>&);                               \
  template SoftmaxLoss<T> softmax_cross_entropy<T>(const Tensor<T>&,                     \
                                                   const std::vector<int>&);             \
  template void sgd_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, T, T, T);

ASFP_INSTANTIATE_OPS(float)
ASFP_INSTANTIATE_OPS(double)

#undef ASFP_INSTANTIATE_OPS

}  // namespace asfp
