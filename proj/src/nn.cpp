#include "nightlift/nn.hpp"

#include <algorithm>
#include <cmath>

#include "nightlift/errors.hpp"

namespace nightlift::nn {

namespace {

int conv_out_dim(int in, int k, int stride) {
  const int pad = k / 2;
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int k, int s)
    : in_ch(in_c),
      out_ch(out_c),
      ksize(k),
      stride(s),
      weight({out_c, in_c, k, k}),
      bias({out_c}),
      grad_weight({out_c, in_c, k, k}),
      grad_bias({out_c}) {
  if (s != 1 && s != 2) throw ConfigError("Conv2d: stride must be 1 or 2");
}

void Conv2d::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
  for (auto& w : weight.data) w = rng.normal(0.0, stddev);
  bias.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.shape.size() != 3 || x.dim(0) != in_ch) throw ShapeError("Conv2d: bad input shape");
  const int H = x.dim(1), W = x.dim(2);
  const int Ho = conv_out_dim(H, ksize, stride);
  const int Wo = conv_out_dim(W, ksize, stride);
  const int pad = ksize / 2;
  Tensor y({out_ch, Ho, Wo});

  for (int co = 0; co < out_ch; ++co) {
    double* yp = y.data.data() + static_cast<std::size_t>(co) * Ho * Wo;
    const double b = bias[static_cast<std::size_t>(co)];
    for (int i = 0; i < Ho * Wo; ++i) yp[i] = b;
  }
  for (int co = 0; co < out_ch; ++co) {
    double* yplane = y.data.data() + static_cast<std::size_t>(co) * Ho * Wo;
    for (int ci = 0; ci < in_ch; ++ci) {
      const double* xplane = x.data.data() + static_cast<std::size_t>(ci) * H * W;
      const double* wk =
          weight.data.data() + (static_cast<std::size_t>(co) * in_ch + ci) * ksize * ksize;
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const double w = wk[ky * ksize + kx];
          if (w == 0.0) continue;
          // yi = yo*stride + ky - pad must land in [0, H)
          int yo0 = 0;
          while (yo0 * stride + ky - pad < 0) ++yo0;
          int yo1 = Ho;
          while (yo1 > yo0 && (yo1 - 1) * stride + ky - pad >= H) --yo1;
          int xo0 = 0;
          while (xo0 * stride + kx - pad < 0) ++xo0;
          int xo1 = Wo;
          while (xo1 > xo0 && (xo1 - 1) * stride + kx - pad >= W) --xo1;
          for (int yo = yo0; yo < yo1; ++yo) {
            const int yi = yo * stride + ky - pad;
            const double* xrow = xplane + static_cast<std::size_t>(yi) * W + (kx - pad);
            double* yrow = yplane + static_cast<std::size_t>(yo) * Wo;
            if (stride == 1) {
              for (int xo = xo0; xo < xo1; ++xo) yrow[xo] += w * xrow[xo];
            } else {
              for (int xo = xo0; xo < xo1; ++xo) yrow[xo] += w * xrow[xo * 2];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
  const int H = x.dim(1), W = x.dim(2);
  const int Ho = dy.dim(1), Wo = dy.dim(2);
  const int pad = ksize / 2;
  Tensor dx({in_ch, H, W});

  for (int co = 0; co < out_ch; ++co) {
    const double* dyplane = dy.data.data() + static_cast<std::size_t>(co) * Ho * Wo;
    double acc = 0.0;
    for (int i = 0; i < Ho * Wo; ++i) acc += dyplane[i];
    grad_bias[static_cast<std::size_t>(co)] += acc;

    for (int ci = 0; ci < in_ch; ++ci) {
      const double* xplane = x.data.data() + static_cast<std::size_t>(ci) * H * W;
      double* dxplane = dx.data.data() + static_cast<std::size_t>(ci) * H * W;
      const double* wk =
          weight.data.data() + (static_cast<std::size_t>(co) * in_ch + ci) * ksize * ksize;
      double* gwk =
          grad_weight.data.data() + (static_cast<std::size_t>(co) * in_ch + ci) * ksize * ksize;
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const double w = wk[ky * ksize + kx];
          double gw = 0.0;
          int yo0 = 0;
          while (yo0 * stride + ky - pad < 0) ++yo0;
          int yo1 = Ho;
          while (yo1 > yo0 && (yo1 - 1) * stride + ky - pad >= H) --yo1;
          int xo0 = 0;
          while (xo0 * stride + kx - pad < 0) ++xo0;
          int xo1 = Wo;
          while (xo1 > xo0 && (xo1 - 1) * stride + kx - pad >= W) --xo1;
          for (int yo = yo0; yo < yo1; ++yo) {
            const int yi = yo * stride + ky - pad;
            const double* xrow = xplane + static_cast<std::size_t>(yi) * W + (kx - pad);
            double* dxrow = dxplane + static_cast<std::size_t>(yi) * W + (kx - pad);
            const double* dyrow = dyplane + static_cast<std::size_t>(yo) * Wo;
            if (stride == 1) {
              for (int xo = xo0; xo < xo1; ++xo) {
                gw += dyrow[xo] * xrow[xo];
                dxrow[xo] += w * dyrow[xo];
              }
            } else {
              for (int xo = xo0; xo < xo1; ++xo) {
                gw += dyrow[xo] * xrow[xo * 2];
                dxrow[xo * 2] += w * dyrow[xo];
              }
            }
          }
          gwk[ky * ksize + kx] += gw;
        }
      }
    }
  }
  return dx;
}

Tensor Conv2d::backward_input(const Tensor& dy, const std::vector<int>& x_shape) const {
  const int H = x_shape[1], W = x_shape[2];
  const int Ho = dy.dim(1), Wo = dy.dim(2);
  const int pad = ksize / 2;
  Tensor dx({in_ch, H, W});
  for (int co = 0; co < out_ch; ++co) {
    const double* dyplane = dy.data.data() + static_cast<std::size_t>(co) * Ho * Wo;
    for (int ci = 0; ci < in_ch; ++ci) {
      double* dxplane = dx.data.data() + static_cast<std::size_t>(ci) * H * W;
      const double* wk =
          weight.data.data() + (static_cast<std::size_t>(co) * in_ch + ci) * ksize * ksize;
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const double w = wk[ky * ksize + kx];
          if (w == 0.0) continue;
          int yo0 = 0;
          while (yo0 * stride + ky - pad < 0) ++yo0;
          int yo1 = Ho;
          while (yo1 > yo0 && (yo1 - 1) * stride + ky - pad >= H) --yo1;
          int xo0 = 0;
          while (xo0 * stride + kx - pad < 0) ++xo0;
          int xo1 = Wo;
          while (xo1 > xo0 && (xo1 - 1) * stride + kx - pad >= W) --xo1;
          for (int yo = yo0; yo < yo1; ++yo) {
            const int yi = yo * stride + ky - pad;
            double* dxrow = dxplane + static_cast<std::size_t>(yi) * W + (kx - pad);
            const double* dyrow = dyplane + static_cast<std::size_t>(yo) * Wo;
            if (stride == 1) {
              for (int xo = xo0; xo < xo1; ++xo) dxrow[xo] += w * dyrow[xo];
            } else {
              for (int xo = xo0; xo < xo1; ++xo) dxrow[xo * 2] += w * dyrow[xo];
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::zero_grad() {
  grad_weight.fill(0.0);
  grad_bias.fill(0.0);
}

void Conv2d::collect(std::vector<Tensor*>& params, std::vector<Tensor*>& grads) {
  params.push_back(&weight);
  params.push_back(&bias);
  grads.push_back(&grad_weight);
  grads.push_back(&grad_bias);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) {
    if (v < 0.0) v = 0.0;
  }
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (x.data[i] <= 0.0) dx.data[i] = 0.0;
  }
  return dx;
}

Tensor upsample2_nearest(const Tensor& x) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor y({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c) {
    const double* xp = x.data.data() + static_cast<std::size_t>(c) * H * W;
    double* yp = y.data.data() + static_cast<std::size_t>(c) * 4 * H * W;
    for (int yy = 0; yy < 2 * H; ++yy) {
      const double* xrow = xp + static_cast<std::size_t>(yy / 2) * W;
      double* yrow = yp + static_cast<std::size_t>(yy) * 2 * W;
      for (int xx = 0; xx < 2 * W; ++xx) yrow[xx] = xrow[xx / 2];
    }
  }
  return y;
}

Tensor upsample2_nearest_backward(const Tensor& dy) {
  const int C = dy.dim(0), H2 = dy.dim(1), W2 = dy.dim(2);
  const int H = H2 / 2, W = W2 / 2;
  Tensor dx({C, H, W});
  for (int c = 0; c < C; ++c) {
    const double* dyp = dy.data.data() + static_cast<std::size_t>(c) * H2 * W2;
    double* dxp = dx.data.data() + static_cast<std::size_t>(c) * H * W;
    for (int yy = 0; yy < H2; ++yy) {
      const double* dyrow = dyp + static_cast<std::size_t>(yy) * W2;
      double* dxrow = dxp + static_cast<std::size_t>(yy / 2) * W;
      for (int xx = 0; xx < W2; ++xx) dxrow[xx / 2] += dyrow[xx];
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: spatial dims differ");
  }
  Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

void split_channels(const Tensor& d, int channels_a, Tensor* da, Tensor* db) {
  const int H = d.dim(1), W = d.dim(2);
  const std::size_t na = static_cast<std::size_t>(channels_a) * H * W;
  if (da) {
    *da = Tensor({channels_a, H, W});
    std::copy(d.data.begin(), d.data.begin() + static_cast<std::ptrdiff_t>(na), da->data.begin());
  }
  if (db) {
    *db = Tensor({d.dim(0) - channels_a, H, W});
    std::copy(d.data.begin() + static_cast<std::ptrdiff_t>(na), d.data.end(), db->data.begin());
  }
}

void SgdOptimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const Tensor* p : params) velocity_.push_back(Tensor(p->shape));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = velocity_[i];
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      v.data[j] = momentum_ * v.data[j] + g.data[j];
      p.data[j] -= lr_ * v.data[j];
    }
  }
}

}  // namespace nightlift::nn
