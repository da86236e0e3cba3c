#include "nightlift/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "nightlift/errors.hpp"
#include "nightlift/losses.hpp"

#include <nlohmann/json.hpp>

namespace nightlift {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Output length of one stride-2 same-padded 3x3 conv.
int half_dim(int n) { return (n - 1) / 2 + 1; }

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace

Image Detector::input_gradient(const Image&, const HeadOutputs&) const {
  throw ConfigError(
      "this detector does not support input gradients; plug in one that does "
      "or train the translator with lambda = 0");
}

void TinyDetectorConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) {
    throw ConfigError("detector: in_channels must be 1 or 3");
  }
  if (base_channels < 1) throw ConfigError("detector: base_channels must be >= 1");
  if (!(anchor_size > 0.0)) throw ConfigError("detector: anchor_size must be > 0");
  if (!(pos_iou > 0.0 && pos_iou < 1.0)) throw ConfigError("detector: pos_iou must be in (0,1)");
  if (!(neg_iou >= 0.0 && neg_iou <= pos_iou)) {
    throw ConfigError("detector: neg_iou must be in [0, pos_iou]");
  }
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ConfigError("detector: score_threshold must be in [0,1]");
  }
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ConfigError("detector: nms_iou must be in (0,1)");
  if (max_detections < 1) throw ConfigError("detector: max_detections must be >= 1");
}

TinyDetector::TinyDetector(const TinyDetectorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_channels;
  c1_ = nn::Conv2d(cfg_.in_channels, b, 3, 2);
  c2_ = nn::Conv2d(b, 2 * b, 3, 2);
  c3_ = nn::Conv2d(2 * b, 2 * b, 3, 1);
  obj_ = nn::Conv2d(2 * b, 1, 1, 1);
  box_ = nn::Conv2d(2 * b, 4, 1, 1);
  Rng rng(derive_seed(cfg_.seed, 0x746e79));  // detector weight stream
  c1_.init_he(rng);
  c2_.init_he(rng);
  c3_.init_he(rng);
  obj_.init_he(rng);
  box_.init_he(rng);
}

void TinyDetector::grid_size(int height, int width, int* grid_h, int* grid_w) const {
  if (height < 1 || width < 1) throw ShapeError("detector: image dimensions must be positive");
  *grid_h = half_dim(half_dim(height));
  *grid_w = half_dim(half_dim(width));
}

Box TinyDetector::anchor_at(int gy, int gx) const {
  const double cx = (gx + 0.5) * kStride;
  const double cy = (gy + 0.5) * kStride;
  const double half = 0.5 * cfg_.anchor_size;
  return Box{cx - half, cy - half, cx + half, cy + half};
}

Box TinyDetector::decode_box(int gy, int gx, const double delta[4], int height,
                             int width) const {
  const Box a = anchor_at(gy, gx);
  const double aw = cfg_.anchor_size, ah = cfg_.anchor_size;
  const double cx = (a.x1 + a.x2) * 0.5 + delta[0] * aw;
  const double cy = (a.y1 + a.y2) * 0.5 + delta[1] * ah;
  const double bw = aw * std::exp(std::clamp(delta[2], -10.0, 10.0));
  const double bh = ah * std::exp(std::clamp(delta[3], -10.0, 10.0));
  Box out{cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh};
  out.x1 = std::clamp(out.x1, 0.0, static_cast<double>(width));
  out.x2 = std::clamp(out.x2, 0.0, static_cast<double>(width));
  out.y1 = std::clamp(out.y1, 0.0, static_cast<double>(height));
  out.y2 = std::clamp(out.y2, 0.0, static_cast<double>(height));
  return out;
}

HeadOutputs TinyDetector::forward(const Image& image, Trace* trace) const {
  if (image.channels != cfg_.in_channels) {
    throw ShapeError("detector: expected " + std::to_string(cfg_.in_channels) +
                     "-channel input, got " + std::to_string(image.channels));
  }
  if (!all_finite(image)) throw NumericError("detector: non-finite input image");

  Tensor x = image_to_tensor(image);
  Tensor z1 = c1_.forward(x);
  Tensor a1 = nn::relu(z1);
  Tensor z2 = c2_.forward(a1);
  Tensor a2 = nn::relu(z2);
  Tensor z3 = c3_.forward(a2);
  Tensor a3 = nn::relu(z3);
  Tensor zo = obj_.forward(a3);
  Tensor zb = box_.forward(a3);

  HeadOutputs heads;
  heads.grid_h = zo.dim(1);
  heads.grid_w = zo.dim(2);
  heads.objectness = zo.data;
  heads.box_delta = zb.data;
  if (!zo.all_finite() || !zb.all_finite()) {
    throw NumericError("detector: non-finite head outputs");
  }

  if (trace) {
    trace->grid_h = heads.grid_h;
    trace->grid_w = heads.grid_w;
    trace->x = std::move(x);
    trace->z1 = std::move(z1);
    trace->a1 = std::move(a1);
    trace->z2 = std::move(z2);
    trace->a2 = std::move(a2);
    trace->z3 = std::move(z3);
    trace->a3 = std::move(a3);
  }
  return heads;
}

HeadOutputs TinyDetector::forward_heads(const Image& image) const {
  return forward(image, nullptr);
}

void TinyDetector::backward(const Trace& trace, const HeadOutputs& grad_heads) {
  if (grad_heads.grid_h != trace.grid_h || grad_heads.grid_w != trace.grid_w) {
    throw ShapeError("detector backward: gradient grid does not match trace");
  }
  Tensor dzo({1, trace.grid_h, trace.grid_w});
  dzo.data = grad_heads.objectness;
  Tensor dzb({4, trace.grid_h, trace.grid_w});
  dzb.data = grad_heads.box_delta;

  Tensor da3 = obj_.backward(trace.a3, dzo);
  const Tensor da3_box = box_.backward(trace.a3, dzb);
  for (std::size_t i = 0; i < da3.data.size(); ++i) da3.data[i] += da3_box.data[i];

  const Tensor dz3 = nn::relu_backward(trace.z3, da3);
  const Tensor da2 = c3_.backward(trace.a2, dz3);
  const Tensor dz2 = nn::relu_backward(trace.z2, da2);
  const Tensor da1 = c2_.backward(trace.a1, dz2);
  const Tensor dz1 = nn::relu_backward(trace.z1, da1);
  c1_.backward(trace.x, dz1);
}

Image TinyDetector::input_gradient(const Image& image, const HeadOutputs& grad_heads) const {
  Trace trace;
  forward(image, &trace);
  if (grad_heads.grid_h != trace.grid_h || grad_heads.grid_w != trace.grid_w) {
    throw ShapeError("detector input_gradient: gradient grid does not match image");
  }
  Tensor dzo({1, trace.grid_h, trace.grid_w});
  dzo.data = grad_heads.objectness;
  Tensor dzb({4, trace.grid_h, trace.grid_w});
  dzb.data = grad_heads.box_delta;

  Tensor da3 = obj_.backward_input(dzo, trace.a3.shape);
  const Tensor da3_box = box_.backward_input(dzb, trace.a3.shape);
  for (std::size_t i = 0; i < da3.data.size(); ++i) da3.data[i] += da3_box.data[i];

  const Tensor dz3 = nn::relu_backward(trace.z3, da3);
  const Tensor da2 = c3_.backward_input(dz3, trace.a2.shape);
  const Tensor dz2 = nn::relu_backward(trace.z2, da2);
  const Tensor da1 = c2_.backward_input(dz2, trace.a1.shape);
  const Tensor dz1 = nn::relu_backward(trace.z1, da1);
  const Tensor dx = c1_.backward_input(dz1, trace.x.shape);
  return tensor_to_image(dx);
}

AnchorTargets TinyDetector::match_targets(int height, int width, const BoxSet& gt) const {
  gt.validate("match_targets ground truth");
  int gh = 0, gw = 0;
  grid_size(height, width, &gh, &gw);
  const std::size_t hw = static_cast<std::size_t>(gh) * gw;

  AnchorTargets t;
  t.grid_h = gh;
  t.grid_w = gw;
  t.labels.assign(hw, 0);
  t.box_delta.assign(4 * hw, 0.0);

  const auto set_regression = [&](std::size_t cell, const Box& g) {
    const int gy = static_cast<int>(cell) / gw;
    const int gx = static_cast<int>(cell) % gw;
    const Box a = anchor_at(gy, gx);
    const double acx = 0.5 * (a.x1 + a.x2), acy = 0.5 * (a.y1 + a.y2);
    const double gcx = 0.5 * (g.x1 + g.x2), gcy = 0.5 * (g.y1 + g.y2);
    t.box_delta[0 * hw + cell] = (gcx - acx) / cfg_.anchor_size;
    t.box_delta[1 * hw + cell] = (gcy - acy) / cfg_.anchor_size;
    t.box_delta[2 * hw + cell] = std::log(g.width() / cfg_.anchor_size);
    t.box_delta[3 * hw + cell] = std::log(g.height() / cfg_.anchor_size);
  };

  if (gt.size() == 0) return t;  // everything stays negative

  // Per-anchor assignment by best IoU.
  std::vector<double> best_anchor_iou(gt.size(), -1.0);
  std::vector<std::size_t> best_anchor_cell(gt.size(), 0);
  for (std::size_t cell = 0; cell < hw; ++cell) {
    const int gy = static_cast<int>(cell) / gw;
    const int gx = static_cast<int>(cell) % gw;
    const Box a = anchor_at(gy, gx);
    double best = 0.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(a, gt.boxes[g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
      if (v > best_anchor_iou[g]) {
        best_anchor_iou[g] = v;
        best_anchor_cell[g] = cell;
      }
    }
    if (best >= cfg_.pos_iou) {
      t.labels[cell] = 1;
      set_regression(cell, gt.boxes[best_g]);
    } else if (best >= cfg_.neg_iou) {
      t.labels[cell] = -1;
    }
  }

  // Every ground-truth box owns its best-IoU anchor even below the positive
  // threshold; later boxes win cell conflicts (deterministic in gt order).
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const std::size_t cell = best_anchor_cell[g];
    t.labels[cell] = 1;
    set_regression(cell, gt.boxes[g]);
  }
  return t;
}

BoxSet TinyDetector::detect(const Image& image) const {
  const HeadOutputs heads = forward_heads(image);
  const std::size_t hw = heads.cells();

  std::vector<Box> cand;
  std::vector<double> cand_scores;
  for (std::size_t cell = 0; cell < hw; ++cell) {
    const double score = sigmoid(heads.objectness[cell]);
    if (!(score > cfg_.score_threshold)) continue;
    const int gy = static_cast<int>(cell) / heads.grid_w;
    const int gx = static_cast<int>(cell) % heads.grid_w;
    const double delta[4] = {heads.box_delta[0 * hw + cell], heads.box_delta[1 * hw + cell],
                             heads.box_delta[2 * hw + cell], heads.box_delta[3 * hw + cell]};
    const Box b = decode_box(gy, gx, delta, image.height, image.width);
    if (b.width() <= 1e-9 || b.height() <= 1e-9) continue;
    cand.push_back(b);
    cand_scores.push_back(score);
  }

  BoxSet out;
  for (const std::size_t idx : nms(cand, cand_scores, cfg_.nms_iou)) {
    if (static_cast<int>(out.size()) >= cfg_.max_detections) break;
    out.push(cand[idx], 0, cand_scores[idx]);
  }
  return out;
}

std::vector<Tensor*> TinyDetector::parameters() {
  std::vector<Tensor*> params, grads;
  c1_.collect(params, grads);
  c2_.collect(params, grads);
  c3_.collect(params, grads);
  obj_.collect(params, grads);
  box_.collect(params, grads);
  return params;
}

std::vector<Tensor*> TinyDetector::gradients() {
  std::vector<Tensor*> params, grads;
  c1_.collect(params, grads);
  c2_.collect(params, grads);
  c3_.collect(params, grads);
  obj_.collect(params, grads);
  box_.collect(params, grads);
  return grads;
}

void TinyDetector::zero_grad() {
  c1_.zero_grad();
  c2_.zero_grad();
  c3_.zero_grad();
  obj_.zero_grad();
  box_.zero_grad();
}

std::string TinyDetector::digest() const {
  std::uint64_t h = 14695981039346656037ULL;
  // Fixed traversal order; digest covers every learnable parameter.
  const Tensor* tensors[] = {&c1_.weight, &c1_.bias, &c2_.weight, &c2_.bias,
                             &c3_.weight, &c3_.bias, &obj_.weight, &obj_.bias,
                             &box_.weight, &box_.bias};
  for (const Tensor* t : tensors) {
    h = fnv1a_bytes(h, t->data.data(), t->data.size() * sizeof(double));
  }
  return to_hex(h);
}

Checkpoint TinyDetector::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "tiny-detector";
  ckpt.meta = {{"in_channels", cfg_.in_channels},
               {"base_channels", cfg_.base_channels},
               {"anchor_size", cfg_.anchor_size},
               {"pos_iou", cfg_.pos_iou},
               {"neg_iou", cfg_.neg_iou},
               {"score_threshold", cfg_.score_threshold},
               {"nms_iou", cfg_.nms_iou},
               {"max_detections", cfg_.max_detections},
               {"seed", cfg_.seed},
               {"digest", digest()}};
  ckpt.arrays = {{"c1.weight", c1_.weight}, {"c1.bias", c1_.bias},
                 {"c2.weight", c2_.weight}, {"c2.bias", c2_.bias},
                 {"c3.weight", c3_.weight}, {"c3.bias", c3_.bias},
                 {"obj.weight", obj_.weight}, {"obj.bias", obj_.bias},
                 {"box.weight", box_.weight}, {"box.bias", box_.bias}};
  return ckpt;
}

TinyDetector TinyDetector::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "tiny-detector") {
    throw DataError("checkpoint kind '" + ckpt.kind + "' is not a tiny-detector");
  }
  TinyDetectorConfig cfg;
  try {
    cfg.in_channels = ckpt.meta.at("in_channels").get<int>();
    cfg.base_channels = ckpt.meta.at("base_channels").get<int>();
    cfg.anchor_size = ckpt.meta.at("anchor_size").get<double>();
    cfg.pos_iou = ckpt.meta.at("pos_iou").get<double>();
    cfg.neg_iou = ckpt.meta.at("neg_iou").get<double>();
    cfg.score_threshold = ckpt.meta.at("score_threshold").get<double>();
    cfg.nms_iou = ckpt.meta.at("nms_iou").get<double>();
    cfg.max_detections = ckpt.meta.at("max_detections").get<int>();
    cfg.seed = ckpt.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tiny-detector checkpoint meta invalid: ") + e.what());
  }
  TinyDetector det(cfg);
  const auto assign = [&](const char* name, Tensor& dst) {
    Tensor src = ckpt.require(name);
    if (!src.same_shape(dst)) {
      throw DataError(std::string("tiny-detector checkpoint array '") + name +
                      "' has the wrong shape");
    }
    dst = std::move(src);
  };
  assign("c1.weight", det.c1_.weight);
  assign("c1.bias", det.c1_.bias);
  assign("c2.weight", det.c2_.weight);
  assign("c2.bias", det.c2_.bias);
  assign("c3.weight", det.c3_.weight);
  assign("c3.bias", det.c3_.bias);
  assign("obj.weight", det.obj_.weight);
  assign("obj.bias", det.obj_.bias);
  assign("box.weight", det.box_.weight);
  assign("box.bias", det.box_.bias);
  return det;
}

void TinyDetector::save(const std::string& path) const { save_checkpoint(to_checkpoint(), path); }

TinyDetector TinyDetector::load(const std::string& path) {
  return from_checkpoint(load_checkpoint(path));
}

void DetectorTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("detector train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("detector train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("detector train: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("detector train: momentum must be in [0,1)");
  }
  if (lr_decay_every < 0) throw ConfigError("detector train: lr_decay_every must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ConfigError("detector train: lr_decay must be in (0,1]");
  }
}

DetectorTrainStats tiny_detector_train(TinyDetector& det,
                                       const std::vector<DetectorTrainSample>& data,
                                       const DetectorTrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("detector train: empty dataset");

  // Targets depend only on geometry, so match once up front.
  std::vector<AnchorTargets> targets;
  targets.reserve(data.size());
  for (const auto& s : data) {
    targets.push_back(det.match_targets(s.image.height, s.image.width, s.gt));
  }

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw IoError("detector train: cannot open log " + cfg.log_path);
  }

  nn::SgdOptimizer opt(cfg.lr, cfg.momentum);
  const std::vector<Tensor*> params = det.parameters();
  const std::vector<Tensor*> grads = det.gradients();

  DetectorTrainStats stats;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x647472, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with our own stream, for cross-platform determinism.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    }

    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch = std::min<std::size_t>(cfg.batch_size, order.size() - done);
      det.zero_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = order[done + b];
        TinyDetector::Trace trace;
        const HeadOutputs heads = det.forward(data[idx].image, &trace);
        epoch_loss += l_det(heads, targets[idx]);
        det.backward(trace, l_det_backward(heads, targets[idx]));
      }
      const double scale = 1.0 / static_cast<double>(batch);
      for (Tensor* g : grads) {
        for (double& v : g->data) v *= scale;
      }
      opt.step(params, grads);
      done += batch;
    }

    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("detector train: loss became non-finite at epoch " +
                         std::to_string(epoch));
    }
    stats.epoch_loss.push_back(epoch_loss);
    if (log) {
      nlohmann::json rec = {{"epoch", epoch}, {"loss", epoch_loss}, {"lr", opt.learning_rate()}};
      log << rec.dump() << "\n";
    }
    if (cfg.lr_decay_every > 0 && (epoch + 1) % cfg.lr_decay_every == 0) {
      opt.set_learning_rate(opt.learning_rate() * cfg.lr_decay);
    }
  }
  return stats;
}

std::vector<BoxSet> detect_batch(const Detector& det, const std::vector<Image>& images) {
  std::vector<BoxSet> out;
  out.reserve(images.size());
  for (const Image& im : images) out.push_back(det.detect(im));
  return out;
}

}  // namespace nightlift
