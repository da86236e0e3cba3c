#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nightlift/checkpoint.hpp"
#include "nightlift/filtering.hpp"
#include "nightlift/image.hpp"
#include "nightlift/nn.hpp"

namespace nightlift {

struct KpnConfig {
  int k = 5;                        // odd kernel side
  int base_channels = 32;           // channels at full resolution
  int depth = 3;                    // number of stride-2 encoder levels
  bool per_channel_kernels = false; // one kernel per channel instead of shared
  int in_channels = 3;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on bad values
};

// Kernel prediction network: encoder-decoder with skip connections and a 1x1
// head projecting to k*k kernel coefficients per pixel, no output
// nonlinearity. Freshly constructed models start near the identity: the head
// bias is a center-tap delta, so translate() initially passes the input
// through almost unchanged.
class KpnModel {
 public:
  // Saved activations from one traced forward pass; consumed by
  // backward_from_kernels.
  struct Trace {
    Tensor input;                 // padded (C, Hp, Wp)
    int out_height = 0;           // crop dims of the kernel field
    int out_width = 0;
    Tensor stem_a_z, stem_b_z;    // pre-relu outputs
    Tensor e0;
    std::vector<Tensor> down_z, enc_z, enc_out;      // per level
    std::vector<Tensor> up_in, upsampled, up_z, fused_in, fuse_z, dec_out;
    Tensor head_in;
  };

  explicit KpnModel(const KpnConfig& cfg);

  // Deterministic given parameters and input; pads internally when dims are
  // not divisible by 2^depth. Throws NumericError naming the layer if an
  // activation goes non-finite.
  KernelField predict_kernels(const Image& image) const;
  KernelField predict_kernels_traced(const Image& image, Trace& trace) const;

  // Accumulates parameter gradients from dL/d(kernel field).
  void backward_from_kernels(const Trace& trace, const KernelField& grad_kernels);

  // predict_kernels + pixel-wise filtering with replicate padding. Output is
  // unclamped; clamp_to_unit() it before writing files or running a detector.
  Image translate(const Image& night) const;

  std::vector<Tensor*> parameters();
  std::vector<Tensor*> gradients();
  void zero_grad();

  const KpnConfig& config() const { return config_; }
  // Empirical |kernel| bound recorded at initialization (probe images).
  double init_kernel_bound() const { return init_kernel_bound_; }

  Checkpoint to_checkpoint() const;
  static KpnModel from_checkpoint(const Checkpoint& ckpt);
  void save(const std::string& path) const;
  static KpnModel load(const std::string& path);

 private:
  KernelField run(const Image& image, Trace* trace) const;

  KpnConfig config_;
  nn::Conv2d stem_a_, stem_b_;
  std::vector<nn::Conv2d> down_, enc_;   // per level below the stem
  std::vector<nn::Conv2d> up_, fuse_;    // indexed by target level
  nn::Conv2d head_;
  double init_kernel_bound_ = 0.0;
};

}  // namespace nightlift
