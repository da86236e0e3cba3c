#pragma once

#include <cstdint>
#include <string>

namespace nightlift {

struct ToyDataResult {
  std::string root;
  std::string day_train_manifest;
  std::string day_test_manifest;
  std::string night_test_manifest;  // same scenes as day_test, night-rendered
  std::string style_dir;            // five synthetic night style references
  std::string params_path;          // degradation parameters, JSON
  int n_train = 0;
  int n_test = 0;
};

// Synthetic desk-scale detection dataset: textured daytime scenes with 1-4
// bright rectangles as objects, plus paired night renditions of the test
// scenes (gamma 2.2 darkening, blue-preserving color cast, Gaussian noise
// sigma 0.02) and five varied night style references. Deterministic in
// `seed`; n_images = 0 still writes valid (empty) manifests and the styles.
ToyDataResult make_toy_data(const std::string& out_dir, int n_images, std::uint64_t seed,
                            int image_size = 64);

}  // namespace nightlift
