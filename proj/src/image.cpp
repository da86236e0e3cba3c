#include "nightlift/image.hpp"

#include <cmath>
#include <limits>

#include "nightlift/errors.hpp"

namespace nightlift {

Image::Image(int h, int w, int c, double fill) {
  if (h < 1 || w < 1) throw ShapeError("Image: height and width must be >= 1");
  if (c != 1 && c != 3) throw ShapeError("Image: channels must be 1 or 3");
  height = h;
  width = w;
  channels = c;
  data.assign(static_cast<std::size_t>(h) * w * c, fill);
}

void require_same_shape(const Image& a, const Image& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch (" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + "x" + std::to_string(b.channels) + ")");
  }
}

bool all_finite(const Image& img) {
  for (double v : img.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Image clamp_to_unit(const Image& img) {
  if (!all_finite(img)) throw DataError("clamp_to_unit: image contains non-finite values");
  Image out = img;
  for (double& v : out.data) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace nightlift
