#pragma once

#include <vector>

#include "nightlift/heads.hpp"
#include "nightlift/image.hpp"

namespace nightlift {

struct LossWeights {
  double lambda = 10.0;  // weight on the detection terms in the total loss

  void validate() const;  // ConfigError if lambda < 0
};

struct LossReport {
  double l_pix = 0.0;
  double l_pix_cons = 0.0;
  double l_det = 0.0;
  double l_det_cons = 0.0;
  double total = 0.0;
  bool no_positive_anchors = false;  // detection loss fell back to its classification term
};

// Mean absolute difference over all pixels and channels.
double l_pix(const Image& pred, const Image& target);

// Gradient of l_pix w.r.t. pred: sign(pred - target) / N, with the
// subgradient at exact ties fixed to 0.
Image l_pix_backward(const Image& pred, const Image& target);

// Same functional form as l_pix; kept as its own entry point because it
// couples two predictions rather than a prediction and ground truth.
double l_pix_cons(const Image& a, const Image& b);

// Elementwise 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise; mean over elements.
// Non-finite input is a numeric error; empty input is 0.
double smooth_l1(const std::vector<double>& x);
double smooth_l1_value(double x);
double smooth_l1_grad(double x);  // derivative: clamp(x, -1, 1)

struct DetLossParts {
  double cls = 0.0;  // balanced binary cross-entropy on objectness logits
  double reg = 0.0;  // smooth-L1 over positive anchors' regression residuals
  bool no_positives = false;

  double total() const { return cls + reg; }
};

// Detection loss of one head map against matched targets:
//   cls: BCE on objectness, positives and negatives each mean-reduced and
//        averaged with weight 1/2 (one side alone if the other is empty);
//        ignored anchors (label -1) contribute nothing.
//   reg: mean smooth-L1 over the 4*P residuals of the P positive anchors;
//        0 (and flagged) when P == 0.
DetLossParts l_det_parts(const HeadOutputs& heads, const AnchorTargets& targets);
double l_det(const HeadOutputs& heads, const AnchorTargets& targets);

// Gradient of l_det w.r.t. the head maps (logits and regression channels).
HeadOutputs l_det_backward(const HeadOutputs& heads, const AnchorTargets& targets);

// Smooth-L1 between two dense head maps at identical anchor positions,
// mean-reduced over all 5*HW elements (objectness plus four regression
// channels). Symmetric. Grid mismatch is a shape error.
double l_det_cons(const HeadOutputs& a, const HeadOutputs& b);

// Gradients of l_det_cons w.r.t. both arguments; either output may be null.
void l_det_cons_backward(const HeadOutputs& a, const HeadOutputs& b,
                         HeadOutputs* grad_a, HeadOutputs* grad_b);

// total = l_pix + l_pix_cons + lambda * (l_det + l_det_cons). Negative
// components violate an internal invariant.
LossReport total_loss(double l_pix_value, double l_pix_cons_value, double l_det_value,
                      double l_det_cons_value, const LossWeights& weights,
                      bool no_positive_anchors = false);

}  // namespace nightlift
