#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nightlift/detector.hpp"
#include "nightlift/image.hpp"
#include "nightlift/kpn.hpp"
#include "nightlift/losses.hpp"
#include "nightlift/map_eval.hpp"
#include "nightlift/stylemix.hpp"

namespace nightlift {

// Inference-time low-light contrast boost. Piecewise-linear by default:
// v < threshold -> gain*v, then the affine segment through (threshold,
// gain*threshold) and (1,1). gamma_mode switches to v^gamma instead.
struct ContrastConfig {
  bool enabled = false;
  double threshold = 0.2;
  double gain = 1.5;
  bool gamma_mode = false;
  double gamma = 0.7;

  void validate() const;  // ConfigError; requires threshold*gain <= 1
};

// Monotone map of [0,1] onto [0,1]; identity when disabled. Input outside
// [0,1] is a data error.
Image contrast_enhance(const Image& image, const ContrastConfig& cfg);

struct TrainConfig {
  // Translator stage.
  double kpn_lr = 0.002;
  int kpn_epochs = 200;
  int pairs_per_epoch = 2000;  // synthetic night images consumed per epoch
  int batch_pairs = 4;         // day images per SGD step (each yields 2 branches)
  double momentum = 0.9;
  // Detector stage.
  double det_lr = 0.0001;
  int det_epochs = 30;
  int det_lr_decay_every = 10;  // epochs between x det_lr_decay steps; 0 = off
  double det_lr_decay = 0.1;
  int det_batch = 8;
  // Data generation.
  int workers = 2;
  int queue_capacity = 8;

  LossWeights weights;
  StyleMixConfig stylemix;
  KpnConfig kpn;
  TinyDetectorConfig detector;
  EvalConfig eval;
  ContrastConfig contrast;
  std::uint64_t seed = 0;

  void validate() const;
  // Pushes `seed` into the sub-configs that carry their own copy.
  void reseed(std::uint64_t s);
};

// Key-value config file: one `key = value` per line, '#' comments. Keys
// mirror the TrainConfig field names, nested fields dot-separated
// (e.g. "stylemix.alpha", "kpn.depth", "contrast.enabled").
TrainConfig load_train_config(const std::string& path);
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
// Each override is "key=value"; applied in order.
void apply_config_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides);

struct TrainKpnResult {
  std::string final_checkpoint;   // clean model checkpoint
  std::string state_checkpoint;   // resumable training state
  std::string log_path;
  int epochs_run = 0;
  int steps_run = 0;
  std::vector<LossReport> step_reports;  // in step order, resumed runs append
  std::string detector_digest;           // verified unchanged across the run
};

// Stage 2: trains the translator against a frozen detector. Per step:
// sample day images, build two synthetic night branches each, translate,
// compute total_loss, and descend the translator parameters; the detector
// only ever provides forward passes and input gradients. Logs one JSON line
// per step, checkpoints every epoch (atomic), aborts on non-finite loss with
// the last epoch checkpoint retained (NumericError names it). With
// resume = true, continues from the state checkpoint in out_dir if present.
TrainKpnResult train_kpn(const TrainConfig& cfg, const std::string& day_manifest_path,
                         const StylePool& pool, const std::string& detector_checkpoint,
                         const std::string& out_dir, bool resume = false);

struct InferenceRecord {
  Image translated;  // clamped to [0,1], id preserved
  BoxSet detections;
};

// contrast_enhance -> translate -> clamp -> detect, per image, order
// preserved.
std::vector<InferenceRecord> infer_night(const std::vector<Image>& images, const KpnModel& kpn,
                                         const Detector& detector,
                                         const ContrastConfig& contrast);

// The translation half of infer_night (no detector).
Image translate_for_io(const KpnModel& kpn, const Image& night, const ContrastConfig& contrast);

}  // namespace nightlift
