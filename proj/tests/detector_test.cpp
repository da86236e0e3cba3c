#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "nightlift/boxes.hpp"
#include "nightlift/detector.hpp"
#include "nightlift/errors.hpp"
#include "nightlift/image.hpp"
#include "nightlift/rng.hpp"
#include "test_util.hpp"

using namespace nightlift;
using testutil::random_image;
using testutil::rel_err;
using testutil::TempDir;

namespace {

TinyDetectorConfig small_config() {
  TinyDetectorConfig cfg;
  cfg.base_channels = 4;
  cfg.seed = 77;
  return cfg;
}

void zero_params(TinyDetector& det) {
  for (Tensor* t : det.parameters()) t->fill(0.0);
}

Tensor* find_bias(TinyDetector& det, std::size_t size) {
  for (Tensor* t : det.parameters()) {
    if (t->shape.size() == 1 && t->size() == size) return t;
  }
  return nullptr;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double heads_dot(const HeadOutputs& a, const HeadOutputs& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.objectness.size(); ++i) s += a.objectness[i] * b.objectness[i];
  for (std::size_t i = 0; i < a.box_delta.size(); ++i) s += a.box_delta[i] * b.box_delta[i];
  return s;
}

}  // namespace

TEST_CASE("anchor grid halves twice with ceil semantics") {
  const TinyDetector det(small_config());
  int gh = 0, gw = 0;
  det.grid_size(64, 64, &gh, &gw);
  CHECK(gh == 16);
  CHECK(gw == 16);
  det.grid_size(10, 13, &gh, &gw);
  CHECK(gh == 3);
  CHECK(gw == 4);
  det.grid_size(1, 1, &gh, &gw);
  CHECK(gh == 1);
  CHECK(gw == 1);
  CHECK_THROWS_AS(det.grid_size(0, 4, &gh, &gw), ShapeError);

  const Box a = det.anchor_at(3, 4);  // center ((4+.5)*4, (3+.5)*4) = (18, 14)
  CHECK(a.x1 == doctest::Approx(10.0));
  CHECK(a.y1 == doctest::Approx(6.0));
  CHECK(a.x2 == doctest::Approx(26.0));
  CHECK(a.y2 == doctest::Approx(22.0));
}

TEST_CASE("box decode inverts the target encoding") {
  const TinyDetector det(small_config());
  // ground truth (12,6,28,22): center (20,14), sides 16
  const double delta[4] = {0.125, 0.0, 0.0, 0.0};
  const Box b = det.decode_box(3, 4, delta, 64, 64);
  CHECK(b.x1 == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(b.y1 == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(b.x2 == doctest::Approx(28.0).epsilon(1e-12));
  CHECK(b.y2 == doctest::Approx(22.0).epsilon(1e-12));

  // exp argument is clamped and the result clipped to the image
  const double wild[4] = {0.0, 0.0, 50.0, 50.0};
  const Box big = det.decode_box(3, 4, wild, 64, 64);
  CHECK(big.x1 == 0.0);
  CHECK(big.y1 == 0.0);
  CHECK(big.x2 == 64.0);
  CHECK(big.y2 == 64.0);
}

TEST_CASE("anchor matching splits positive, ignore, and negative bands") {
  const TinyDetector det(small_config());
  BoxSet gt;
  gt.push(Box{12, 6, 28, 22}, 0);
  const AnchorTargets t = det.match_targets(64, 64, gt);
  REQUIRE(t.grid_h == 16);
  REQUIRE(t.grid_w == 16);
  const auto cell = [&](int gy, int gx) { return static_cast<std::size_t>(gy) * 16 + gx; };

  CHECK(t.labels[cell(3, 4)] == 1);   // IoU 0.778
  CHECK(t.labels[cell(3, 5)] == 1);   // IoU 0.778
  CHECK(t.labels[cell(3, 6)] == -1);  // IoU 0.4545: ambiguous band
  CHECK(t.labels[cell(3, 3)] == -1);
  CHECK(t.labels[cell(2, 4)] == -1);  // IoU 0.488
  CHECK(t.labels[cell(3, 2)] == 0);   // IoU 0.231
  CHECK(t.labels[cell(10, 10)] == 0);

  const std::size_t hw = t.cells();
  const std::size_t c34 = cell(3, 4);
  CHECK(t.box_delta[0 * hw + c34] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(t.box_delta[1 * hw + c34] == doctest::Approx(0.0));
  CHECK(t.box_delta[2 * hw + c34] == doctest::Approx(0.0));
  CHECK(t.box_delta[3 * hw + c34] == doctest::Approx(0.0));
}

TEST_CASE("every ground-truth box owns its best anchor") {
  const TinyDetector det(small_config());
  BoxSet gt;
  gt.push(Box{0, 0, 4, 4}, 0);  // far below the positive IoU threshold everywhere
  const AnchorTargets t = det.match_targets(64, 64, gt);
  CHECK(t.positives() == 1);
  CHECK(t.labels[0] == 1);  // first best-IoU cell in scan order
  const std::size_t hw = t.cells();
  CHECK(t.box_delta[2 * hw + 0] == doctest::Approx(std::log(4.0 / 16.0)).epsilon(1e-12));

  BoxSet none;
  const AnchorTargets empty = det.match_targets(64, 64, none);
  CHECK(empty.positives() == 0);
  for (const auto l : empty.labels) CHECK(l == 0);
}

TEST_CASE("detect with surgically planted heads returns anchors after nms") {
  TinyDetector det(small_config());
  zero_params(det);
  Tensor* obj_bias = find_bias(det, 1);
  REQUIRE(obj_bias != nullptr);
  (*obj_bias)[0] = 3.0;

  Rng rng(88);
  const Image img = random_image(rng, 32, 32, 3);
  const BoxSet dets = det.detect(img);
  REQUIRE(dets.size() > 0);

  // all weights are zero, so every cell proposes its clipped anchor at the
  // same confidence; expected result is plain nms over those anchors
  std::vector<Box> anchors;
  std::vector<double> scores;
  int gh = 0, gw = 0;
  det.grid_size(32, 32, &gh, &gw);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      Box a = det.anchor_at(gy, gx);
      a.x1 = std::clamp(a.x1, 0.0, 32.0);
      a.x2 = std::clamp(a.x2, 0.0, 32.0);
      a.y1 = std::clamp(a.y1, 0.0, 32.0);
      a.y2 = std::clamp(a.y2, 0.0, 32.0);
      anchors.push_back(a);
      scores.push_back(sigmoid(3.0));
    }
  }
  const auto kept = nms(anchors, scores, det.config().nms_iou);
  REQUIRE(dets.size() == kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    CHECK(dets.boxes[i].x1 == doctest::Approx(anchors[kept[i]].x1));
    CHECK(dets.boxes[i].y1 == doctest::Approx(anchors[kept[i]].y1));
    CHECK(dets.scores[i] == doctest::Approx(sigmoid(3.0)).epsilon(1e-12));
    CHECK(dets.classes[i] == 0);
  }

  // at the threshold nothing passes: the cut is strict
  (*obj_bias)[0] = 0.0;  // sigma(0) == score_threshold == 0.5
  CHECK(det.detect(img).size() == 0);
}

TEST_CASE("iou and nms reference cases") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, Box{5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
  CHECK_THROWS_AS(iou(a, Box{3, 3, 3, 3}), std::invalid_argument);

  const std::vector<Box> boxes = {{0, 0, 10, 10}, {1, 1, 11, 11}, {30, 30, 40, 40}};
  const std::vector<double> scores = {0.9, 0.8, 0.7};
  const auto kept = nms(boxes, scores, 0.5);
  REQUIRE(kept.size() == 2);  // second box overlaps the first above 0.5
  CHECK(kept[0] == 0);
  CHECK(kept[1] == 2);

  // equal scores: ties keep the lower index
  const auto tie = nms(boxes, {0.5, 0.5, 0.5}, 0.5);
  REQUIRE(tie.size() == 2);
  CHECK(tie[0] == 0);
  CHECK(tie[1] == 2);
}

TEST_CASE("digest is stable, sensitive, and survives checkpoints") {
  TempDir dir("detckpt");
  TinyDetector a(small_config());
  TinyDetector b(small_config());
  CHECK(a.digest() == b.digest());
  CHECK(a.digest().size() == 16);

  TinyDetectorConfig other = small_config();
  other.seed = 78;
  const TinyDetector c(other);
  CHECK(a.digest() != c.digest());

  (*a.parameters()[0])[0] += 1e-9;
  CHECK(a.digest() != b.digest());

  const std::string path = dir.file("det.ckpt");
  b.set_frozen(true);
  b.save(path);
  const TinyDetector loaded = TinyDetector::load(path);
  CHECK(loaded.digest() == b.digest());
  CHECK(loaded.frozen());
  CHECK(loaded.config().base_channels == 4);
}

TEST_CASE("forward heads are deterministic and match the traced pass") {
  Rng rng(91);
  const TinyDetector det(small_config());
  const Image img = random_image(rng, 24, 20, 3);
  const HeadOutputs h1 = det.forward_heads(img);
  const HeadOutputs h2 = det.forward_heads(img);
  CHECK(h1.objectness == h2.objectness);
  CHECK(h1.box_delta == h2.box_delta);
  CHECK(h1.grid_h == 6);
  CHECK(h1.grid_w == 5);

  TinyDetector::Trace trace;
  const HeadOutputs h3 = det.forward(img, &trace);
  CHECK(h3.objectness == h1.objectness);
  CHECK(h3.box_delta == h1.box_delta);
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(92);
  TinyDetector det(small_config());
  const Image img = random_image(rng, 12, 12, 3);

  TinyDetector::Trace trace;
  const HeadOutputs heads = det.forward(img, &trace);
  HeadOutputs upstream = heads;
  for (auto& v : upstream.objectness) v = rng.uniform(-1.0, 1.0);
  for (auto& v : upstream.box_delta) v = rng.uniform(-1.0, 1.0);

  det.zero_grad();
  det.backward(trace, upstream);

  const auto params = det.parameters();
  const auto grads = det.gradients();
  REQUIRE(params.size() == grads.size());
  const double eps = 1e-6;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    for (std::size_t j = 0; j < t.size(); j += std::max<std::size_t>(1, t.size() / 4)) {
      const double keep = t[j];
      t[j] = keep + eps;
      const double hi = heads_dot(upstream, det.forward_heads(img));
      t[j] = keep - eps;
      const double lo = heads_dot(upstream, det.forward_heads(img));
      t[j] = keep;
      CHECK(rel_err((*grads[p])[j], (hi - lo) / (2 * eps)) < 1e-6);
    }
  }
}

TEST_CASE("input gradients match finite differences") {
  Rng rng(93);
  TinyDetector det(small_config());
  CHECK(det.supports_input_gradients());
  Image img = random_image(rng, 12, 12, 3);
  const HeadOutputs heads = det.forward_heads(img);
  HeadOutputs upstream = heads;
  for (auto& v : upstream.objectness) v = rng.uniform(-1.0, 1.0);
  for (auto& v : upstream.box_delta) v = rng.uniform(-1.0, 1.0);

  const Image g = det.input_gradient(img, upstream);
  REQUIRE(g.same_shape(img));
  const double eps = 1e-6;
  for (std::size_t j = 0; j < img.size(); j += std::max<std::size_t>(1, img.size() / 11)) {
    const double keep = img.data[j];
    img.data[j] = keep + eps;
    const double hi = heads_dot(upstream, det.forward_heads(img));
    img.data[j] = keep - eps;
    const double lo = heads_dot(upstream, det.forward_heads(img));
    img.data[j] = keep;
    CHECK(rel_err(g.data[j], (hi - lo) / (2 * eps)) < 1e-5);
  }
}

TEST_CASE("training reduces loss on a separable toy set and changes the digest") {
  Rng rng(94);
  std::vector<DetectorTrainSample> data;
  for (int i = 0; i < 4; ++i) {
    Image img(32, 32, 3, 0.1);
    const int x0 = 4 + 4 * i;
    const int y0 = 6 + 2 * i;
    for (int y = y0; y < y0 + 14; ++y)
      for (int x = x0; x < x0 + 14; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.9;
    BoxSet gt;
    gt.push(Box{static_cast<double>(x0), static_cast<double>(y0),
                static_cast<double>(x0 + 14), static_cast<double>(y0 + 14)},
            0);
    data.push_back({img, gt});
  }

  TinyDetector det(small_config());
  const std::string before = det.digest();
  DetectorTrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 2;
  tc.lr = 0.01;
  tc.seed = 5;
  const DetectorTrainStats stats = tiny_detector_train(det, data, tc);
  REQUIRE(stats.epoch_loss.size() == 12);
  CHECK(stats.epoch_loss.back() < stats.epoch_loss.front());
  CHECK(det.digest() != before);

  // determinism: the full run reproduces bit-for-bit
  TinyDetector det2(small_config());
  tiny_detector_train(det2, data, tc);
  CHECK(det2.digest() == det.digest());

  CHECK_THROWS_AS(tiny_detector_train(det, {}, tc), DataError);
}

TEST_CASE("detect_batch preserves order") {
  Rng rng(95);
  TinyDetector det(small_config());
  zero_params(det);
  Tensor* obj_bias = find_bias(det, 1);
  REQUIRE(obj_bias != nullptr);
  (*obj_bias)[0] = 3.0;
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(random_image(rng, 16 + 4 * i, 16, 3));
  const auto results = detect_batch(det, images);
  REQUIRE(results.size() == 3);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const BoxSet direct = det.detect(images[i]);
    REQUIRE(results[i].size() == direct.size());
    for (std::size_t j = 0; j < direct.size(); ++j) {
      CHECK(results[i].boxes[j].x1 == direct.boxes[j].x1);
      CHECK(results[i].scores[j] == direct.scores[j]);
    }
  }
}

TEST_CASE("detector config validation") {
  TinyDetectorConfig cfg = small_config();
  cfg.pos_iou = 0.3;
  cfg.neg_iou = 0.4;  // bands must not cross
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.anchor_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.base_channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.score_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
