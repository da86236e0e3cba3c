#pragma once

#include <vector>

#include "nightlift/image.hpp"

namespace nightlift {

enum class PaddingMode {
  kReplicate,  // extend borders by repeating edge pixels
  kZero,
};

// Per-pixel k x k kernel map. Each pixel (y, x) owns `groups` kernels of k*k
// taps; groups == 1 shares one kernel across all image channels, groups == C
// gives every channel its own kernel. Entries are unconstrained: they may be
// negative and may sum past 1 (night-to-day needs amplification).
struct KernelField {
  int k = 0;  // odd kernel side
  int height = 0;
  int width = 0;
  int groups = 1;
  std::vector<double> data;  // [(y * W + x) * groups + g] * k*k + (u * k + v)

  KernelField() = default;
  KernelField(int k_, int h, int w, int groups_ = 1);

  double& at(int y, int x, int u, int v, int g = 0) {
    return data[(static_cast<std::size_t>((static_cast<std::size_t>(y) * width + x) * groups + g)) *
                    (k * k) +
                (u * k + v)];
  }
  double at(int y, int x, int u, int v, int g = 0) const {
    return data[(static_cast<std::size_t>((static_cast<std::size_t>(y) * width + x) * groups + g)) *
                    (k * k) +
                (u * k + v)];
  }

  std::size_t taps_per_pixel() const { return static_cast<std::size_t>(groups) * k * k; }

  // Identity field: 1 at the center tap, 0 elsewhere.
  static KernelField delta(int k, int h, int w, int groups = 1);
};

// Eq.-style pixel-wise filtering: out(y,x,c) = sum_{u,v} K(y,x)[u,v] *
// I_pad(y+u-k/2, x+v-k/2, c). The kernel for a pixel is shared across channels
// unless kernels.groups == C. Output is NOT clamped.
Image apply_pixelwise_filter(const Image& image, const KernelField& kernels, PaddingMode padding);

// Exact partial derivatives of apply_pixelwise_filter contracted with
// `upstream` (same shape as the output). Either output pointer may be null to
// skip that gradient.
void filter_gradients(const Image& image, const KernelField& kernels, const Image& upstream,
                      PaddingMode padding, Image* grad_image, KernelField* grad_kernels);

}  // namespace nightlift
