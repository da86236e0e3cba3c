#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nightlift {

// H x W x C raster, channels-last, nominally in [0, 1]. Intermediate math may
// leave the unit range; values are clamped only at I/O boundaries and before
// feeding a detector.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // height * width * channels
  std::string id;            // optional identifier (manifest key)
  std::string path;          // optional source path

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Throws ShapeError naming `where` if the two images differ in shape.
void require_same_shape(const Image& a, const Image& b, const char* where);

bool all_finite(const Image& img);

// Min/max clamp to [0, 1]; idempotent. Throws DataError on non-finite values.
Image clamp_to_unit(const Image& img);

// 10*log10(1/MSE) in dB, MSE over all pixels and channels. Identical images
// return +infinity.
double psnr(const Image& a, const Image& b);

}  // namespace nightlift
