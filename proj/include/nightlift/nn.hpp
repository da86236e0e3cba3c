#pragma once

#include <cstdint>
#include <vector>

#include "nightlift/rng.hpp"
#include "nightlift/tensor.hpp"

namespace nightlift::nn {

// Square convolution with zero same-padding (pad = ksize/2), stride 1 or 2.
// Gradients accumulate into grad_weight / grad_bias until zero_grad().
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int ksize = 3;
  int stride = 1;
  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (out)
  Tensor grad_weight;
  Tensor grad_bias;

  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int s = 1);

  // He-normal weights, zero bias.
  void init_he(Rng& rng);

  Tensor forward(const Tensor& x) const;
  // Returns dL/dx for the saved input x; accumulates parameter gradients.
  Tensor backward(const Tensor& x, const Tensor& dy);
  // dL/dx only; parameter gradients untouched (frozen use).
  Tensor backward_input(const Tensor& dy, const std::vector<int>& x_shape) const;

  void zero_grad();
  void collect(std::vector<Tensor*>& params, std::vector<Tensor*>& grads);
};

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// Nearest-neighbor 2x upsampling of a (C, H, W) tensor.
Tensor upsample2_nearest(const Tensor& x);
Tensor upsample2_nearest_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int channels_a, Tensor* da, Tensor* db);

// SGD with classical momentum: v = mu * v + g; p -= lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace nightlift::nn
