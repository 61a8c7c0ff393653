#include "asfp/model.hpp"
#include "asfp/ops.hpp"
#include "asfp/random.hpp"

namespace asfp {

namespace {

constexpr double kEps = 1e-5;

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t, 0.0, 1.0);
  return t;
}

// Scalar probe loss: sum(d_out * op(x)) so that d loss/d x is the analytic
// backward applied to d_out.
double weighted_sum(const Tensor<double>& y, const Tensor<double>& d_out) {
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i] * d_out[i];
  return s;
}

GradSuiteEntry check_conv(Rng& rng) {
  const Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor<double> w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor<double> d_out = random_tensor({2, 4, 8, 8}, rng);
  const ConvGrad<double> g = conv2d_grad(x, w, d_out, 1, 1);
  const double err_x = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(conv2d(probe, w, 1, 1), d_out); },
      x, g.d_input, kEps);
  const double err_w = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(conv2d(x, probe, 1, 1), d_out); },
      w, g.d_weight, kEps);
  return {"conv2d", std::max(err_x, err_w), 1e-4};
}

GradSuiteEntry check_conv_strided(Rng& rng) {
  const Tensor<double> x = random_tensor({2, 2, 9, 9}, rng);
  const Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> d_out = random_tensor({2, 3, 4, 4}, rng);
  const ConvGrad<double> g = conv2d_grad(x, w, d_out, 2, 0);
  const double err_x = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(conv2d(probe, w, 2, 0), d_out); },
      x, g.d_input, kEps);
  const double err_w = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(conv2d(x, probe, 2, 0), d_out); },
      w, g.d_weight, kEps);
  return {"conv2d_stride2", std::max(err_x, err_w), 1e-4};
}

GradSuiteEntry check_batchnorm(Rng& rng) {
  const Tensor<double> x = random_tensor({4, 2, 5, 5}, rng);
  Tensor<double> gamma = random_tensor({2}, rng);
  Tensor<double> beta = random_tensor({2}, rng);
  const Tensor<double> d_out = random_tensor({4, 2, 5, 5}, rng);
  const double eps = 1e-5;

  auto run = [&](const Tensor<double>& xs, const Tensor<double>& gs,
                 const Tensor<double>& bs) {
    Tensor<double> rm({2}), rv({2});
    rv.fill(1.0);
    return batchnorm<double>(xs, gs, bs, rm, rv, eps, 0.1, true);
  };
  const BatchNormOut<double> fwd = run(x, gamma, beta);
  const BatchNormGrad<double> g = batchnorm_grad(x, gamma, fwd.mean, fwd.var, eps, d_out);

  const double err_x = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(run(probe, gamma, beta).output, d_out); },
      x, g.d_input, kEps);
  const double err_g = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(run(x, probe, beta).output, d_out); },
      gamma, g.d_gamma, kEps);
  const double err_b = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(run(x, gamma, probe).output, d_out); },
      beta, g.d_beta, kEps);
  return {"batchnorm", std::max({err_x, err_g, err_b}), 1e-4};
}

GradSuiteEntry check_relu(Rng& rng) {
  const Tensor<double> x = random_tensor({3, 4, 6, 6}, rng);
  const Tensor<double> d_out = random_tensor({3, 4, 6, 6}, rng);
  const Tensor<double> g = relu_grad(x, d_out);
  const double err = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(relu(probe), d_out); }, x, g,
      kEps);
  return {"relu", err, 1e-4};
}

GradSuiteEntry check_max_pool(Rng& rng) {
  const Tensor<double> x = random_tensor({2, 3, 6, 6}, rng);
  const MaxPoolOut<double> fwd = max_pool2(x);
  const Tensor<double> d_out = random_tensor(fwd.output.shape(), rng);
  const Tensor<double> g = max_pool2_grad(fwd.argmax, x.shape(), d_out);
  const double err = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(max_pool2(probe).output, d_out); },
      x, g, kEps);
  return {"max_pool2", err, 1e-4};
}

GradSuiteEntry check_global_avg_pool(Rng& rng) {
  const Tensor<double> x = random_tensor({2, 5, 4, 4}, rng);
  const Tensor<double> d_out = random_tensor({2, 5}, rng);
  const Tensor<double> g = global_avg_pool_grad(x.shape(), d_out);
  const double err = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(global_avg_pool(probe), d_out); },
      x, g, kEps);
  return {"global_avg_pool", err, 1e-4};
}

GradSuiteEntry check_affine(Rng& rng) {
  const Tensor<double> x = random_tensor({3, 7}, rng);
  const Tensor<double> w = random_tensor({5, 7}, rng);
  const Tensor<double> b = random_tensor({5}, rng);
  const Tensor<double> d_out = random_tensor({3, 5}, rng);
  const AffineGrad<double> g = affine_grad(x, w, d_out);
  const double err_x = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(affine(probe, w, b), d_out); },
      x, g.d_input, kEps);
  const double err_w = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(affine(x, probe, b), d_out); },
      w, g.d_weight, kEps);
  const double err_b = grad_check(
      [&](const Tensor<double>& probe) { return weighted_sum(affine(x, w, probe), d_out); },
      b, g.d_bias, kEps);
  return {"affine", std::max({err_x, err_w, err_b}), 1e-4};
}

GradSuiteEntry check_softmax(Rng& rng) {
  const Tensor<double> logits = random_tensor({4, 6}, rng);
  std::vector<int> labels(4);
  for (auto& l : labels) l = rng.uniform_int(6);
  const SoftmaxLoss<double> fwd = softmax_cross_entropy(logits, labels);
  const double err = grad_check(
      [&](const Tensor<double>& probe) { return softmax_cross_entropy(probe, labels).loss; },
      logits, fwd.d_logits, kEps);
  return {"softmax_cross_entropy", err, 1e-4};
}

// Whole-network check on a small residual model: every parameter of every
// layer type participates in one loss.
GradSuiteEntry check_full_model(Rng& rng) {
  Model<double> model = build_resnet<double>(1, {4, 6, 8}, {3, 8, 8}, 10, 11);
  model.training = true;
  Tensor<double> batch = random_tensor({2, 3, 8, 8}, rng);
  std::vector<int> labels = {3, 7};

  auto loss_of = [&](Model<double>& m) {
    // Fresh running stats each call so train-mode forward is repeatable.
    Model<double> copy = m;
    ForwardCache<double> cache;
    copy.training = true;
    const Tensor<double> logits = forward(copy, batch, cache);
    return softmax_cross_entropy(logits, labels).loss;
  };

  Model<double> work = model;
  ForwardCache<double> cache;
  const Tensor<double> logits = forward(work, batch, cache);
  const SoftmaxLoss<double> loss = softmax_cross_entropy(logits, labels);
  Model<double> grads = backward(work, cache, loss.d_logits);

  std::vector<Tensor<double>*> params, grad_tensors;
  for_each_param(model, std::function<void(const std::string&, Tensor<double>&)>(
                            [&](const std::string&, Tensor<double>& t) {
                              params.push_back(&t);
                            }));
  for_each_param(grads, std::function<void(const std::string&, Tensor<double>&)>(
                            [&](const std::string&, Tensor<double>& t) {
                              grad_tensors.push_back(&t);
                            }));

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<double>& p = *params[i];
    const Tensor<double>& g = *grad_tensors[i];
    const double err = grad_check(
        [&](const Tensor<double>& probe) {
          Tensor<double> saved = p;
          p = probe;
          const double l = loss_of(model);
          p = saved;
          return l;
        },
        p, g, kEps);
    worst = std::max(worst, err);
  }
  return {"full_model_resnet", worst, 1e-3};
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite() {
  Rng rng(20240229);
  std::vector<GradSuiteEntry> entries;
  entries.push_back(check_conv(rng));
  entries.push_back(check_conv_strided(rng));
  entries.push_back(check_batchnorm(rng));
  entries.push_back(check_relu(rng));
  entries.push_back(check_max_pool(rng));
  entries.push_back(check_global_avg_pool(rng));
  entries.push_back(check_affine(rng));
  entries.push_back(check_softmax(rng));
  entries.push_back(check_full_model(rng));
  return entries;
}

}  // namespace asfp
