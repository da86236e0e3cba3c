#pragma once

#include <map>
#include <vector>

#include "nightlift/boxes.hpp"

namespace nightlift {

struct EvalConfig {
  double iou_threshold = 0.5;
  double score_threshold = 0.05;  // detections below this are discarded
  bool eleven_point = false;      // VOC-style 11-point interpolation

  void validate() const;  // ConfigError unless 0 < iou_threshold < 1
};

struct EvalResult {
  double map = 0.0;
  std::map<int, double> ap_per_class;
  // (recall, precision) after each detection, score-descending, per class.
  std::map<int, std::vector<std::pair<double, double>>> pr_per_class;
  std::size_t total_gt = 0;
  std::size_t total_detections = 0;  // after the score threshold
};

// Detection mAP: per class, score-descending greedy matching where each
// detection claims the highest-IoU still-unmatched ground-truth box of its
// class in its image (a true positive needs IoU >= iou_threshold; every
// other detection is a false positive). AP integrates the precision-recall
// curve with all-points interpolation unless cfg.eleven_point is set; mAP
// averages over the union of classes present in ground truth or
// predictions. A class with no ground truth scores 1.0 with no predictions
// and 0.0 otherwise; an entirely empty task evaluates to 1.0.
EvalResult evaluate_map(const std::vector<BoxSet>& preds, const std::vector<BoxSet>& gts,
                        const EvalConfig& cfg);

// Convenience wrapper returning just the mAP value.
double average_precision(const std::vector<BoxSet>& preds, const std::vector<BoxSet>& gts,
                         const EvalConfig& cfg);

}  // namespace nightlift
