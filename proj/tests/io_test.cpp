#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nightlift/checkpoint.hpp"
#include "nightlift/errors.hpp"
#include "nightlift/image.hpp"
#include "nightlift/image_io.hpp"
#include "nightlift/manifest.hpp"
#include "nightlift/rng.hpp"
#include "test_util.hpp"

using namespace nightlift;
using testutil::TempDir;

TEST_CASE("png roundtrip is exact on the 8-bit lattice") {
  TempDir dir("pngrt");
  Image img(5, 7, 3);
  Rng rng(31);
  for (auto& v : img.data) v = rng.uniform_int(0, 255) / 255.0;
  const std::string path = dir.file("lattice.png");
  save_image(img, path);

  const Image back = load_image(path);
  REQUIRE(back.same_shape(img));
  CHECK(back.id == "lattice");
  CHECK(back.path == path);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
}

TEST_CASE("png grayscale loads as a single channel") {
  TempDir dir("pnggray");
  Image img(4, 4, 1);
  for (int i = 0; i < 16; ++i) img.data[i] = i / 15.0;
  const std::string path = dir.file("gray.png");
  save_image(img, path);
  const Image back = load_image(path);
  CHECK(back.channels == 1);
  CHECK(back.height == 4);
  CHECK(back.data[15] == doctest::Approx(1.0));
}

TEST_CASE("jpeg writes and reloads with the right shape") {
  TempDir dir("jpegrt");
  Image img(16, 24, 3, 0.5);
  const std::string path = dir.file("flat.jpg");
  save_image(img, path);
  const Image back = load_image(path);
  CHECK(back.height == 16);
  CHECK(back.width == 24);
  CHECK(back.channels == 3);
  CHECK(back.id == "flat");
  // lossy, but a flat mid-gray should survive within a couple of levels
  for (const double v : back.data) CHECK(std::abs(v - 0.5) < 0.02);
}

TEST_CASE("image io failure modes") {
  TempDir dir("iofail");
  CHECK_THROWS_AS(load_image(dir.file("absent.png")), IoError);
  CHECK_THROWS_AS(load_image(dir.file("noext")), DataError);

  std::ofstream(dir.file("bogus.png")) << "not a png";
  CHECK_THROWS_AS(load_image(dir.file("bogus.png")), DataError);

  const Image empty;
  CHECK_THROWS_AS(save_image(empty, dir.file("empty.png")), DataError);
}

TEST_CASE("manifest roundtrip preserves records") {
  TempDir dir("manifest");
  std::vector<ManifestRecord> records(2);
  records[0].image = "images/night_0001.png";
  records[0].boxes.push(Box{1, 2, 30, 40}, 0);
  records[0].boxes.push(Box{5.5, 6.25, 18, 22}, 2);
  records[0].day_image = "images/day_0001.png";
  records[1].image = "images/night_0002.png";

  const std::string path = dir.file("train.jsonl");
  write_manifest(records, path);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image == records[0].image);
  CHECK(back[0].day_image == records[0].day_image);
  REQUIRE(back[0].boxes.size() == 2);
  CHECK(back[0].boxes.boxes[1].y1 == doctest::Approx(6.25));
  CHECK(back[0].boxes.classes[1] == 2);
  CHECK(back[1].boxes.size() == 0);
  CHECK(back[1].day_image.empty());
}

TEST_CASE("manifest errors carry the line number") {
  TempDir dir("manifesterr");
  const std::string path = dir.file("broken.jsonl");
  std::ofstream(path) << R"({"image": "a.png", "boxes": []})" << "\n"
                      << R"({"boxes": []})" << "\n";  // missing image key
  try {
    read_manifest(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);  // offending line number
    CHECK(msg.find("image") != std::string::npos);
  }
  CHECK_THROWS_AS(read_manifest(dir.file("missing.jsonl")), DataError);
}

TEST_CASE("manifest paths resolve against the manifest directory") {
  CHECK(resolve_manifest_path("/data/set/train.jsonl", "images/a.png") == "/data/set/images/a.png");
  CHECK(resolve_manifest_path("/data/set/train.jsonl", "/abs/a.png") == "/abs/a.png");
  CHECK(resolve_manifest_path("train.jsonl", "a.png") == "a.png");
}

TEST_CASE("prediction records roundtrip and default the class") {
  TempDir dir("preds");
  std::vector<PredictionRecord> records(1);
  records[0].image_id = "night_0001";
  records[0].detections.push(Box{0, 0, 8, 8}, 1, 0.75);
  const std::string path = dir.file("pred.jsonl");
  write_predictions(records, path);
  const auto back = read_predictions(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].image_id == "night_0001");
  CHECK(back[0].detections.scores[0] == doctest::Approx(0.75));
  CHECK(back[0].detections.classes[0] == 1);

  // hand-written record without the optional classes array
  const std::string bare = dir.file("bare.jsonl");
  std::ofstream(bare) << R"({"image_id": "x", "boxes": [[0,0,4,4]], "scores": [0.5]})" << "\n";
  const auto parsed = read_predictions(bare);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].detections.classes[0] == 0);
}

TEST_CASE("checkpoints roundtrip bit-exactly") {
  TempDir dir("ckpt");
  Checkpoint ckpt;
  ckpt.kind = "test-kind";
  ckpt.meta = {{"alpha", 0.25}, {"note", "hello"}};
  Tensor t({2, 3});
  Rng rng(17);
  for (auto& v : t.data) v = rng.normal();
  t.data[0] = 1.0 / 3.0;  // not representable in fewer bits
  ckpt.arrays.emplace_back("weights", t);

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.kind == "test-kind");
  CHECK(back.meta.at("alpha").get<double>() == 0.25);
  const Tensor* w = back.find("weights");
  REQUIRE(w != nullptr);
  REQUIRE(w->shape == t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(w->data[i] == t.data[i]);

  CHECK(back.find("absent") == nullptr);
  CHECK_THROWS_AS(back.require("absent"), DataError);
}

TEST_CASE("checkpoint rejects corruption and missing files") {
  TempDir dir("ckptbad");
  CHECK_THROWS_AS(load_checkpoint(dir.file("nope.ckpt")), IoError);

  Checkpoint ckpt;
  ckpt.kind = "k";
  ckpt.arrays.emplace_back("a", Tensor({2}, 1.5));
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(ckpt, path);

  // flip the magic
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(0);
  f.put('X');
  f.close();
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
