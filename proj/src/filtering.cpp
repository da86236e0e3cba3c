#include "nightlift/filtering.hpp"

#include <stdexcept>
#include <string>

#include "nightlift/errors.hpp"

namespace nightlift {

namespace {

void check_args(const Image& image, const KernelField& kernels) {
  if (kernels.k < 1 || kernels.k % 2 == 0) {
    throw std::invalid_argument("pixelwise filter: kernel side must be odd and >= 1, got " +
                                std::to_string(kernels.k));
  }
  if (image.height != kernels.height || image.width != kernels.width) {
    throw ShapeError("pixelwise filter: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " vs kernel field " +
                     std::to_string(kernels.height) + "x" + std::to_string(kernels.width));
  }
  if (kernels.groups != 1 && kernels.groups != image.channels) {
    throw ShapeError("pixelwise filter: kernel groups must be 1 or C");
  }
}

// Padded copy of the image; the filter and its gradients index into this
// buffer so boundary handling lives in one place.
Image make_padded(const Image& image, int r, PaddingMode padding) {
  Image padded(image.height + 2 * r, image.width + 2 * r, image.channels, 0.0);
  for (int y = -r; y < image.height + r; ++y) {
    int sy = y;
    bool out_y = sy < 0 || sy >= image.height;
    if (padding == PaddingMode::kReplicate) sy = sy < 0 ? 0 : (sy >= image.height ? image.height - 1 : sy);
    for (int x = -r; x < image.width + r; ++x) {
      int sx = x;
      bool out_x = sx < 0 || sx >= image.width;
      if (padding == PaddingMode::kReplicate) sx = sx < 0 ? 0 : (sx >= image.width ? image.width - 1 : sx);
      if (padding == PaddingMode::kZero && (out_y || out_x)) continue;
      for (int c = 0; c < image.channels; ++c) {
        padded.at(y + r, x + r, c) = image.at(sy, sx, c);
      }
    }
  }
  return padded;
}

}  // namespace

KernelField::KernelField(int k_, int h, int w, int groups_) {
  if (k_ < 1 || k_ % 2 == 0) throw std::invalid_argument("KernelField: k must be odd and >= 1");
  if (h < 1 || w < 1) throw ShapeError("KernelField: dims must be >= 1");
  if (groups_ < 1) throw ShapeError("KernelField: groups must be >= 1");
  k = k_;
  height = h;
  width = w;
  groups = groups_;
  data.assign(static_cast<std::size_t>(h) * w * groups * k * k, 0.0);
}

KernelField KernelField::delta(int k, int h, int w, int groups) {
  KernelField f(k, h, w, groups);
  const int center = k / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int g = 0; g < groups; ++g) f.at(y, x, center, center, g) = 1.0;
  return f;
}

Image apply_pixelwise_filter(const Image& image, const KernelField& kernels, PaddingMode padding) {
  check_args(image, kernels);
  const int k = kernels.k;
  const int r = k / 2;
  const int C = image.channels;
  const Image padded = make_padded(image, r, padding);

  Image out(image.height, image.width, C, 0.0);
  out.id = image.id;
  const int kk = k * k;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double* taps =
          kernels.data.data() +
          (static_cast<std::size_t>(y) * image.width + x) * kernels.taps_per_pixel();
      for (int c = 0; c < C; ++c) {
        const double* kc = taps + (kernels.groups == 1 ? 0 : static_cast<std::size_t>(c) * kk);
        double acc = 0.0;
        for (int u = 0; u < k; ++u) {
          // Row of padded pixels starting at (y+u, x); v walks x.
          const double* row =
              padded.data.data() +
              (static_cast<std::size_t>(y + u) * padded.width + x) * C + c;
          for (int v = 0; v < k; ++v) {
            acc += kc[u * k + v] * row[static_cast<std::size_t>(v) * C];
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

void filter_gradients(const Image& image, const KernelField& kernels, const Image& upstream,
                      PaddingMode padding, Image* grad_image, KernelField* grad_kernels) {
  check_args(image, kernels);
  require_same_shape(image, upstream, "filter_gradients");
  const int k = kernels.k;
  const int r = k / 2;
  const int C = image.channels;
  const Image padded = make_padded(image, r, padding);

  if (grad_image) *grad_image = Image(image.height, image.width, C, 0.0);
  if (grad_kernels) *grad_kernels = KernelField(k, image.height, image.width, kernels.groups);

  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < C; ++c) {
        const double up = upstream.at(y, x, c);
        if (up == 0.0) continue;
        const int g = kernels.groups == 1 ? 0 : c;
        for (int u = 0; u < k; ++u) {
          for (int v = 0; v < k; ++v) {
            if (grad_kernels) {
              grad_kernels->at(y, x, u, v, g) += up * padded.at(y + u, x + v, c);
            }
            if (grad_image) {
              // Map the tap back onto the source pixel it read; replicate
              // padding folds border reads onto the edge pixel, zero padding
              // reads nothing outside.
              int sy = y + u - r;
              int sx = x + v - r;
              if (padding == PaddingMode::kReplicate) {
                sy = sy < 0 ? 0 : (sy >= image.height ? image.height - 1 : sy);
                sx = sx < 0 ? 0 : (sx >= image.width ? image.width - 1 : sx);
              } else if (sy < 0 || sy >= image.height || sx < 0 || sx >= image.width) {
                continue;
              }
              grad_image->at(sy, sx, c) += up * kernels.at(y, x, u, v, g);
            }
          }
        }
      }
    }
  }
}

}  // namespace nightlift
