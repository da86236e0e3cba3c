#include "nightlift/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "nightlift/image.hpp"

namespace nightlift {

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  data.assign(n, fill);
}

void Tensor::fill(double v) {
  for (auto& x : data) x = v;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) {
    const double a = std::fabs(v);
    if (a > m) m = a;
  }
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c) {
    double* plane = t.data.data() + static_cast<std::size_t>(c) * img.height * img.width;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        plane[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
      }
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.shape.size() != 3) throw std::invalid_argument("tensor_to_image: expected (C,H,W)");
  const int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Image img(H, W, C);
  for (int c = 0; c < C; ++c) {
    const double* plane = t.data.data() + static_cast<std::size_t>(c) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        img.at(y, x, c) = plane[static_cast<std::size_t>(y) * W + x];
      }
    }
  }
  return img;
}

}  // namespace nightlift
