#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nightlift {

// Axis-aligned box in pixel coordinates, corners exclusive of degenerate
// extents: x1 < x2 and y1 < y2 for a valid box.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

// Boxes with aligned class labels and, for predictions, aligned scores.
// Ground truth carries no scores.
struct BoxSet {
  std::vector<Box> boxes;
  std::vector<int> classes;
  std::vector<double> scores;

  std::size_t size() const { return boxes.size(); }
  bool has_scores() const { return !scores.empty(); }
  void push(const Box& b, int cls);
  void push(const Box& b, int cls, double score);
  // DataError on misaligned lists, invalid geometry, negative class, or
  // (when scores are present) scores outside [0,1].
  void validate(const std::string& what) const;
};

// Intersection-over-union in [0,1]; degenerate input boxes are an argument
// error.
double iou(const Box& a, const Box& b);

// Greedy non-maximum suppression: returns indices of kept boxes in
// score-descending order; a box is dropped when its IoU with any
// already-kept box exceeds `iou_threshold`. Ties in score break by lower
// index for determinism.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold);

}  // namespace nightlift
