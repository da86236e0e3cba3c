#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nightlift/boxes.hpp"
#include "nightlift/checkpoint.hpp"
#include "nightlift/heads.hpp"
#include "nightlift/image.hpp"
#include "nightlift/nn.hpp"

namespace nightlift {

// Boundary contract for any plugged-in detector. The anchor grid must be a
// pure function of image size, and a frozen detector's forward pass must be
// deterministic in its input.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual HeadOutputs forward_heads(const Image& image) const = 0;
  virtual AnchorTargets match_targets(int height, int width, const BoxSet& gt) const = 0;
  virtual BoxSet detect(const Image& image) const = 0;
  virtual bool frozen() const = 0;
  // Stable hex digest of all parameters; the frozen-detector contract is
  // "digest unchanged".
  virtual std::string digest() const = 0;

  // Optional capability: gradient of a scalar loss w.r.t. the input image,
  // given the loss gradient w.r.t. the head maps. Needed when detection
  // losses must flow back into an upstream translator.
  virtual bool supports_input_gradients() const { return false; }
  virtual Image input_gradient(const Image& image, const HeadOutputs& grad_heads) const;
};

struct TinyDetectorConfig {
  int in_channels = 3;
  int base_channels = 16;   // first conv width; second stage is twice this
  double anchor_size = 16;  // square anchor side, pixels
  double pos_iou = 0.5;     // anchor IoU at or above this is positive
  double neg_iou = 0.4;     // below this is negative; between is ignored
  double score_threshold = 0.5;  // detect() keeps cells above this probability
  double nms_iou = 0.5;
  int max_detections = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

// Built-in single-class detector: three 3x3 convs (two at stride 2, so the
// anchor grid has stride 4) and 1x1 objectness/regression heads, one square
// anchor per cell. Small enough to train on synthetic scenes in seconds.
class TinyDetector : public Detector {
 public:
  explicit TinyDetector(const TinyDetectorConfig& cfg);

  HeadOutputs forward_heads(const Image& image) const override;
  AnchorTargets match_targets(int height, int width, const BoxSet& gt) const override;
  BoxSet detect(const Image& image) const override;
  bool frozen() const override { return frozen_; }
  std::string digest() const override;
  bool supports_input_gradients() const override { return true; }
  Image input_gradient(const Image& image, const HeadOutputs& grad_heads) const override;

  void set_frozen(bool value) { frozen_ = value; }
  const TinyDetectorConfig& config() const { return cfg_; }
  static constexpr int kStride = 4;

  // Grid dims for an image size (pure in the size).
  void grid_size(int height, int width, int* grid_h, int* grid_w) const;
  // Anchor box of one cell.
  Box anchor_at(int gy, int gx) const;
  // Decode a regression vector against a cell's anchor.
  Box decode_box(int gy, int gx, const double delta[4], int height, int width) const;

  // Training access (bypasses the frozen flag; callers manage that).
  struct Trace;
  HeadOutputs forward(const Image& image, Trace* trace) const;
  void backward(const Trace& trace, const HeadOutputs& grad_heads);  // accumulates grads

  std::vector<Tensor*> parameters();
  std::vector<Tensor*> gradients();
  void zero_grad();

  Checkpoint to_checkpoint() const;
  static TinyDetector from_checkpoint(const Checkpoint& ckpt);
  void save(const std::string& path) const;
  static TinyDetector load(const std::string& path);

 private:
  TinyDetectorConfig cfg_;
  nn::Conv2d c1_, c2_, c3_, obj_, box_;
  bool frozen_ = false;
};

struct TinyDetector::Trace {
  Tensor x;                    // network input
  Tensor z1, z2, z3;           // pre-activation conv outputs
  Tensor a1, a2, a3;           // post-relu activations
  int grid_h = 0, grid_w = 0;
};

struct DetectorTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-4;          // paper-derived detector fine-tune rate
  double momentum = 0.9;
  int lr_decay_every = 10;   // epochs between x0.1 decays; 0 disables
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  std::string log_path;      // optional JSON-lines loss log

  void validate() const;
};

struct DetectorTrainSample {
  Image image;
  BoxSet gt;
};

struct DetectorTrainStats {
  std::vector<double> epoch_loss;  // mean per-image loss per epoch
};

// Trains the tiny detector in place on single-class data. Deterministic in
// the config seed. Empty dataset is a data error.
DetectorTrainStats tiny_detector_train(TinyDetector& det,
                                       const std::vector<DetectorTrainSample>& data,
                                       const DetectorTrainConfig& cfg);

// Per-image detection over a batch; requires a frozen (or at least
// initialized) detector. Unfrozen detectors are accepted; a null detector or
// an unloaded checkpoint is the caller's StateError.
std::vector<BoxSet> detect_batch(const Detector& det, const std::vector<Image>& images);

}  // namespace nightlift
