#pragma once

#include <cstddef>
#include <vector>

namespace nightlift {

// Dense row-major double tensor; NN code uses (C, H, W) order.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v);
  double max_abs() const;
  bool all_finite() const;
};

struct Image;  // defined in image.hpp

// Channels-last image <-> (C, H, W) tensor conversions.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

}  // namespace nightlift
