#include "nightlift/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nightlift/errors.hpp"

namespace nightlift {

void BoxSet::push(const Box& b, int cls) {
  boxes.push_back(b);
  classes.push_back(cls);
}

void BoxSet::push(const Box& b, int cls, double score) {
  boxes.push_back(b);
  classes.push_back(cls);
  scores.push_back(score);
}

void BoxSet::validate(const std::string& what) const {
  if (classes.size() != boxes.size()) {
    throw DataError(what + ": classes not aligned with boxes");
  }
  if (!scores.empty() && scores.size() != boxes.size()) {
    throw DataError(what + ": scores not aligned with boxes");
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
        !std::isfinite(b.y2) || !b.valid()) {
      throw DataError(what + ": box " + std::to_string(i) + " is degenerate");
    }
    if (classes[i] < 0) {
      throw DataError(what + ": box " + std::to_string(i) + " has negative class");
    }
    if (!scores.empty() && !(scores[i] >= 0.0 && scores[i] <= 1.0)) {
      throw DataError(what + ": box " + std::to_string(i) + " score outside [0,1]");
    }
  }
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: scores not aligned with boxes");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<std::size_t> kept;
  for (const std::size_t i : order) {
    bool suppressed = false;
    for (const std::size_t j : kept) {
      if (iou(boxes[i], boxes[j]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace nightlift
