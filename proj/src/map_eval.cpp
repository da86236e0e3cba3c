#include "nightlift/map_eval.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "nightlift/errors.hpp"

namespace nightlift {
namespace {

struct Detection {
  std::size_t image = 0;
  std::size_t index = 0;  // position within its image's BoxSet
  double score = 0.0;
};

double integrate_all_points(std::vector<double>& recall, std::vector<double>& precision) {
  // Precision envelope over the PR points, integrated at recall steps.
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) best = std::max(best, precision[j]);
    ap += (recall[i] - prev_recall) * best;
    prev_recall = recall[i];
  }
  return ap;
}

double integrate_eleven_point(const std::vector<double>& recall,
                              const std::vector<double>& precision) {
  double sum = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double t = k / 10.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= t - 1e-12) best = std::max(best, precision[i]);
    }
    sum += best;
  }
  return sum / 11.0;
}

}  // namespace

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ConfigError("eval: iou_threshold must be in (0,1)");
  }
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ConfigError("eval: score_threshold must be in [0,1]");
  }
}

EvalResult evaluate_map(const std::vector<BoxSet>& preds, const std::vector<BoxSet>& gts,
                        const EvalConfig& cfg) {
  cfg.validate();
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("evaluate_map: prediction and ground-truth lists differ in length");
  }
  std::set<int> class_ids;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    preds[i].validate("predictions[" + std::to_string(i) + "]");
    gts[i].validate("ground truth[" + std::to_string(i) + "]");
    if (preds[i].size() > 0 && !preds[i].has_scores()) {
      throw DataError("predictions[" + std::to_string(i) + "] carry no scores");
    }
    for (const int c : preds[i].classes) class_ids.insert(c);
    for (const int c : gts[i].classes) class_ids.insert(c);
  }

  EvalResult result;
  for (const BoxSet& g : gts) result.total_gt += g.size();
  if (class_ids.empty()) {
    result.map = 1.0;  // nothing to find, nothing claimed
    return result;
  }

  double ap_sum = 0.0;
  for (const int cls : class_ids) {
    // Gather this class's detections (score-thresholded) and GT count.
    std::vector<Detection> dets;
    std::size_t n_gt = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      for (std::size_t d = 0; d < preds[i].size(); ++d) {
        if (preds[i].classes[d] != cls) continue;
        if (preds[i].scores[d] < cfg.score_threshold) continue;
        dets.push_back({i, d, preds[i].scores[d]});
      }
      for (std::size_t g = 0; g < gts[i].size(); ++g) n_gt += (gts[i].classes[g] == cls);
    }
    result.total_detections += dets.size();

    double ap = 0.0;
    if (n_gt == 0) {
      ap = dets.empty() ? 1.0 : 0.0;
    } else if (!dets.empty()) {
      std::stable_sort(dets.begin(), dets.end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });

      std::vector<std::vector<bool>> claimed(gts.size());
      for (std::size_t i = 0; i < gts.size(); ++i) claimed[i].assign(gts[i].size(), false);

      std::vector<double> recall, precision;
      std::size_t tp = 0, fp = 0;
      for (const Detection& det : dets) {
        const BoxSet& gt = gts[det.image];
        double best_iou = 0.0;
        std::size_t best_g = 0;
        bool found = false;
        for (std::size_t g = 0; g < gt.size(); ++g) {
          if (gt.classes[g] != cls || claimed[det.image][g]) continue;
          const double v = iou(preds[det.image].boxes[det.index], gt.boxes[g]);
          if (v > best_iou) {
            best_iou = v;
            best_g = g;
            found = true;
          }
        }
        if (found && best_iou >= cfg.iou_threshold) {
          claimed[det.image][best_g] = true;
          ++tp;
        } else {
          ++fp;
        }
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      }
      ap = cfg.eleven_point ? integrate_eleven_point(recall, precision)
                            : integrate_all_points(recall, precision);
      auto& pr = result.pr_per_class[cls];
      pr.reserve(recall.size());
      for (std::size_t i = 0; i < recall.size(); ++i) pr.emplace_back(recall[i], precision[i]);
    }
    result.ap_per_class[cls] = ap;
    ap_sum += ap;
  }
  result.map = ap_sum / static_cast<double>(class_ids.size());
  return result;
}

double average_precision(const std::vector<BoxSet>& preds, const std::vector<BoxSet>& gts,
                         const EvalConfig& cfg) {
  return evaluate_map(preds, gts, cfg).map;
}

}  // namespace nightlift
