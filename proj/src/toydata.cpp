#include "nightlift/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "nightlift/boxes.hpp"
#include "nightlift/errors.hpp"
#include "nightlift/image.hpp"
#include "nightlift/image_io.hpp"
#include "nightlift/manifest.hpp"
#include "nightlift/rng.hpp"

#include <nlohmann/json.hpp>

namespace nightlift {
namespace {

namespace fs = std::filesystem;

constexpr double kNightGamma = 2.2;
constexpr double kNightCast[3] = {0.55, 0.65, 0.95};  // blue survives the cast
constexpr double kNightNoiseSigma = 0.02;

std::string index_name(const char* prefix, int i) {
  std::ostringstream os;
  os << prefix << "_";
  os.width(4);
  os.fill('0');
  os << i;
  return os.str();
}

// Smooth textured backdrop: coarse per-cell gray noise, bilinearly upsampled,
// with a mild per-channel tint.
Image make_background(int size, Rng& rng) {
  const int coarse = std::max(2, size / 8);
  std::vector<double> grid(static_cast<std::size_t>(coarse) * coarse);
  for (double& v : grid) v = 0.38 + 0.24 * rng.uniform();
  const double tint[3] = {0.02 * (rng.uniform() - 0.5), 0.02 * (rng.uniform() - 0.5),
                          0.02 * (rng.uniform() - 0.5)};

  Image img(size, size, 3);
  const double scale = static_cast<double>(coarse - 1) / std::max(1, size - 1);
  for (int y = 0; y < size; ++y) {
    const double fy = y * scale;
    const int y0 = std::min(coarse - 2, static_cast<int>(fy));
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = x * scale;
      const int x0 = std::min(coarse - 2, static_cast<int>(fx));
      const double wx = fx - x0;
      const double v00 = grid[static_cast<std::size_t>(y0) * coarse + x0];
      const double v01 = grid[static_cast<std::size_t>(y0) * coarse + x0 + 1];
      const double v10 = grid[static_cast<std::size_t>(y0 + 1) * coarse + x0];
      const double v11 = grid[static_cast<std::size_t>(y0 + 1) * coarse + x0 + 1];
      const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(v + tint[c], 0.0, 1.0);
      }
    }
  }
  return img;
}

struct Scene {
  Image day;
  BoxSet gt;
};

Scene make_scene(int size, Rng& rng) {
  Scene scene;
  scene.day = make_background(size, rng);

  const int want = static_cast<int>(rng.uniform_int(1, 4));
  for (int n = 0; n < want; ++n) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      const int bw = static_cast<int>(rng.uniform_int(10, 28));
      const int bh = static_cast<int>(rng.uniform_int(10, 28));
      if (bw + 2 >= size || bh + 2 >= size) continue;
      const int x1 = static_cast<int>(rng.uniform_int(1, size - bw - 1));
      const int y1 = static_cast<int>(rng.uniform_int(1, size - bh - 1));
      const Box box{static_cast<double>(x1), static_cast<double>(y1),
                    static_cast<double>(x1 + bw), static_cast<double>(y1 + bh)};
      bool clear = true;
      for (const Box& other : scene.gt.boxes) {
        if (iou(box, other) > 0.15) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;

      const double color[3] = {0.78 + 0.17 * rng.uniform(), 0.74 + 0.18 * rng.uniform(),
                               0.70 + 0.18 * rng.uniform()};
      for (int y = y1; y < y1 + bh; ++y) {
        for (int x = x1; x < x1 + bw; ++x) {
          const double jitter = 0.02 * rng.normal();
          for (int c = 0; c < 3; ++c) {
            scene.day.at(y, x, c) = std::clamp(color[c] + jitter, 0.0, 1.0);
          }
        }
      }
      scene.gt.push(box, 0);
      break;
    }
  }
  return scene;
}

// The fixed toy degradation: dark nonlinear tone curve, color cast, sensor
// noise. Parameterized so the style references can vary around it.
Image night_render(const Image& day, double gamma, const double cast[3], double sigma,
                   Rng& rng) {
  Image night(day.height, day.width, day.channels);
  night.id = day.id;
  for (int y = 0; y < day.height; ++y) {
    for (int x = 0; x < day.width; ++x) {
      for (int c = 0; c < day.channels; ++c) {
        const double v = std::pow(day.at(y, x, c), gamma) * cast[c] + sigma * rng.normal();
        night.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return night;
}

}  // namespace

ToyDataResult make_toy_data(const std::string& out_dir, int n_images, std::uint64_t seed,
                            int image_size) {
  if (n_images < 0) throw std::invalid_argument("make_toy_data: n_images must be >= 0");
  if (image_size < 32) throw std::invalid_argument("make_toy_data: image_size must be >= 32");

  const fs::path root(out_dir);
  const fs::path img_dir = root / "images";
  const fs::path style_dir = root / "styles";
  try {
    fs::create_directories(img_dir);
    fs::create_directories(style_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("make_toy_data: cannot create output directories: ") + e.what());
  }

  ToyDataResult result;
  result.root = root.string();
  result.style_dir = style_dir.string();
  result.n_train = n_images;
  result.n_test = n_images == 0 ? 0 : std::max(1, n_images / 4);

  // Training split: daytime only.
  std::vector<ManifestRecord> day_train;
  for (int i = 0; i < n_images; ++i) {
    Rng rng(derive_seed(seed, 0x746f79, 1, static_cast<std::uint64_t>(i)));
    Scene scene = make_scene(image_size, rng);
    const std::string name = index_name("day_train", i);
    scene.day.id = name;
    save_image(scene.day, (img_dir / (name + ".png")).string());
    ManifestRecord rec;
    rec.image = "images/" + name + ".png";
    rec.boxes = scene.gt;
    day_train.push_back(std::move(rec));
  }

  // Test split: fresh scenes rendered both as day and as night, sharing GT.
  std::vector<ManifestRecord> day_test, night_test;
  for (int i = 0; i < result.n_test; ++i) {
    Rng rng(derive_seed(seed, 0x746f79, 2, static_cast<std::uint64_t>(i)));
    Scene scene = make_scene(image_size, rng);
    const std::string day_name = index_name("test_day", i);
    const std::string night_name = index_name("test_night", i);
    scene.day.id = day_name;
    save_image(scene.day, (img_dir / (day_name + ".png")).string());

    Rng noise_rng(derive_seed(seed, 0x746f79, 3, static_cast<std::uint64_t>(i)));
    Image night = night_render(scene.day, kNightGamma, kNightCast, kNightNoiseSigma, noise_rng);
    night.id = night_name;
    save_image(night, (img_dir / (night_name + ".png")).string());

    ManifestRecord drec;
    drec.image = "images/" + day_name + ".png";
    drec.boxes = scene.gt;
    day_test.push_back(std::move(drec));

    ManifestRecord nrec;
    nrec.image = "images/" + night_name + ".png";
    nrec.boxes = scene.gt;
    nrec.day_image = "images/" + day_name + ".png";
    night_test.push_back(std::move(nrec));
  }

  // Five style references spanning a range of nighttime looks.
  const double style_gammas[5] = {1.8, 2.0, 2.2, 2.4, 2.6};
  const double style_casts[5][3] = {{0.50, 0.60, 0.92},
                                    {0.55, 0.65, 0.95},
                                    {0.60, 0.68, 0.90},
                                    {0.48, 0.58, 0.98},
                                    {0.58, 0.70, 0.88}};
  for (int i = 0; i < 5; ++i) {
    Rng rng(derive_seed(seed, 0x746f79, 4, static_cast<std::uint64_t>(i)));
    Scene scene = make_scene(image_size, rng);
    Rng noise_rng(derive_seed(seed, 0x746f79, 5, static_cast<std::uint64_t>(i)));
    Image style =
        night_render(scene.day, style_gammas[i], style_casts[i], kNightNoiseSigma, noise_rng);
    style.id = "style_" + std::to_string(i);
    save_image(style, (style_dir / (style.id + ".png")).string());
  }

  result.day_train_manifest = (root / "day_train.jsonl").string();
  result.day_test_manifest = (root / "day_test.jsonl").string();
  result.night_test_manifest = (root / "night_test.jsonl").string();
  write_manifest(day_train, result.day_train_manifest);
  write_manifest(day_test, result.day_test_manifest);
  write_manifest(night_test, result.night_test_manifest);

  // Degradation parameters, recorded so downstream thresholds are
  // reproducible from the dataset alone.
  result.params_path = (root / "toy_params.json").string();
  const nlohmann::json params = {
      {"seed", seed},
      {"n_train", result.n_train},
      {"n_test", result.n_test},
      {"image_size", image_size},
      {"night_gamma", kNightGamma},
      {"night_cast", {kNightCast[0], kNightCast[1], kNightCast[2]}},
      {"night_noise_sigma", kNightNoiseSigma},
      {"style_gammas", style_gammas},
  };
  std::ofstream params_out(result.params_path, std::ios::trunc);
  if (!params_out) throw IoError("make_toy_data: cannot write " + result.params_path);
  params_out << params.dump(2) << "\n";
  return result;
}

}  // namespace nightlift
