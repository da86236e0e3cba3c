// Independent reference implementations used to cross-check the production
// code. Everything here is written from the mathematical definitions with
// deliberately different structure (no shared padding buffers, per-prefix
// re-matching, explicit envelopes) so a bug in the library cannot hide in its
// oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "nightlift/boxes.hpp"
#include "nightlift/filtering.hpp"
#include "nightlift/image.hpp"

namespace oracle {

// Pixel-wise filtering straight from the definition: for every output pixel
// gather the k*k window with explicit source-coordinate handling.
inline nightlift::Image naive_filter(const nightlift::Image& img,
                                     const nightlift::KernelField& kf,
                                     nightlift::PaddingMode padding) {
  const int r = kf.k / 2;
  nightlift::Image out(img.height, img.width, img.channels, 0.0);
  out.id = img.id;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const int g = kf.groups == 1 ? 0 : c;
        double acc = 0.0;
        for (int u = 0; u < kf.k; ++u) {
          for (int v = 0; v < kf.k; ++v) {
            int sy = y + u - r;
            int sx = x + v - r;
            if (padding == nightlift::PaddingMode::kReplicate) {
              sy = std::clamp(sy, 0, img.height - 1);
              sx = std::clamp(sx, 0, img.width - 1);
            } else if (sy < 0 || sy >= img.height || sx < 0 || sx >= img.width) {
              continue;
            }
            acc += kf.at(y, x, u, v, g) * img.at(sy, sx, c);
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

// IoU from the definition, no shared helpers.
inline double box_iou(const nightlift::Box& a, const nightlift::Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

struct FlatDet {
  std::size_t image = 0;
  nightlift::Box box;
  double score = 0.0;
};

// Greedy matching of a fixed detection list (already score-sorted) against
// per-image ground truth; returns the number of true positives. Matching is
// recomputed from scratch for every prefix by the caller.
inline std::size_t match_count(const std::vector<FlatDet>& dets,
                               const std::vector<std::vector<nightlift::Box>>& gt,
                               double iou_thr) {
  std::vector<std::vector<bool>> used(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), false);
  std::size_t tp = 0;
  for (const auto& d : dets) {
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < gt[d.image].size(); ++j) {
      if (used[d.image][j]) continue;
      const double v = box_iou(d.box, gt[d.image][j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    // A detection only consumes a ground-truth box when it scores a true
    // positive; sub-threshold overlaps leave the box available.
    if (best >= iou_thr) {
      used[d.image][best_j] = true;
      ++tp;
    }
  }
  return tp;
}

// Brute-force single-class average precision: every prefix of the
// score-sorted detection list is re-matched from scratch to produce one
// (recall, precision) sample, then the all-points precision envelope is
// integrated exactly. `eleven_point` switches to the 11-point average.
inline double brute_force_ap(std::vector<FlatDet> dets,
                             const std::vector<std::vector<nightlift::Box>>& gt,
                             double iou_thr, bool eleven_point = false) {
  std::size_t n_gt = 0;
  for (const auto& g : gt) n_gt += g.size();
  if (n_gt == 0) return dets.empty() ? 1.0 : 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const FlatDet& a, const FlatDet& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  for (std::size_t i = 1; i <= dets.size(); ++i) {
    const std::vector<FlatDet> prefix(dets.begin(), dets.begin() + i);
    const std::size_t tp = match_count(prefix, gt, iou_thr);
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i));
  }
  if (eleven_point) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      // max precision over samples with recall >= r; 0 if unreachable
      double env = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r && precision[i] > env) env = precision[i];
      }
      sum += env;
    }
    return sum / 11.0;
  }
  double ap = 0.0;
  double prev_r = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] <= prev_r) continue;
    double env = 0.0;  // precision envelope at and beyond this sample
    for (std::size_t j = i; j < precision.size(); ++j) env = std::max(env, precision[j]);
    ap += (recall[i] - prev_r) * env;
    prev_r = recall[i];
  }
  return ap;
}

}  // namespace oracle
