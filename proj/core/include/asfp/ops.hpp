#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "asfp/tensor.hpp"

namespace asfp {

// Cross-correlation (no kernel flip): input [N,Cin,H,W], weight
// [Cout,Cin,Kh,Kw]. Output spatial extents use floor division, so stride-2
// downsampling on even inputs behaves the usual way.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int pad);

template <typename T>
struct ConvGrad {
  Tensor<T> d_input;
  Tensor<T> d_weight;
};

template <typename T>
ConvGrad<T> conv2d_grad(const Tensor<T>& input, const Tensor<T>& weight,
                        const Tensor<T>& d_output, int stride, int pad);

template <typename T>
struct BatchNormOut {
  Tensor<T> output;
  Tensor<T> mean;  // batch statistics, present only in training mode
  Tensor<T> var;
};

// Training mode normalizes by batch statistics and folds them into the
// running stats in place (exponential moving average, unbiased variance for
// the running estimate). Eval mode normalizes by the running stats.
template <typename T>
BatchNormOut<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, Tensor<T>& running_mean,
                          Tensor<T>& running_var, T eps, T momentum, bool training);

template <typename T>
struct BatchNormGrad {
  Tensor<T> d_input;
  Tensor<T> d_gamma;
  Tensor<T> d_beta;
};

// Backward of training-mode batchnorm; mean/var are the batch statistics
// returned by the forward pass.
template <typename T>
BatchNormGrad<T> batchnorm_grad(const Tensor<T>& input, const Tensor<T>& gamma,
                                const Tensor<T>& mean, const Tensor<T>& var, T eps,
                                const Tensor<T>& d_output);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_grad(const Tensor<T>& input, const Tensor<T>& d_output);

template <typename T>
struct MaxPoolOut {
  Tensor<T> output;
  std::vector<std::int64_t> argmax;  // flat index into the input tensor
};

// 2x2 max pooling with stride 2; ties resolve to the first element scanned.
template <typename T>
MaxPoolOut<T> max_pool2(const Tensor<T>& input);

template <typename T>
Tensor<T> max_pool2_grad(const std::vector<std::int64_t>& argmax,
                         const std::vector<int>& input_shape, const Tensor<T>& d_output);

// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_grad(const std::vector<int>& input_shape,
                               const Tensor<T>& d_output);

// input [N,Din] * weight [Dout,Din]^T + bias [Dout].
template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct AffineGrad {
  Tensor<T> d_input;
  Tensor<T> d_weight;
  Tensor<T> d_bias;
};

template <typename T>
AffineGrad<T> affine_grad(const Tensor<T>& input, const Tensor<T>& weight,
                          const Tensor<T>& d_output);

template <typename T>
struct SoftmaxLoss {
  double loss = 0.0;        // batch mean of -log softmax(logits)[label]
  Tensor<T> d_logits;       // (softmax - onehot) / N
};

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// v <- momentum*v + grad + weight_decay*value; value <- value - lr*v.
template <typename T>
void sgd_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& velocity, T lr,
                T momentum, T weight_decay);

// Central finite differences of a scalar-valued closure against an analytic
// gradient. Relative error uses max(|a|,|b|,1e-8) as the denominator.
double grad_check(const std::function<double(const Tensor<double>&)>& f,
                  const Tensor<double>& x, const Tensor<double>& analytic, double eps);

// Same check restricted to a chosen set of flat coordinates.
double grad_check_coords(const std::function<double(const Tensor<double>&)>& f,
                         const Tensor<double>& x, const Tensor<double>& analytic,
                         std::span<const std::int64_t> coords, double eps);

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
};

// Canned 64-bit finite-difference verification of every layer backward,
// plus a whole-network check on a small residual model.
std::vector<GradSuiteEntry> run_gradient_suite();

}  // namespace asfp
