#include "nightlift/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nightlift/errors.hpp"

namespace nightlift {
namespace {

// Numerically stable BCE on a logit: max(z,0) - z*y + log(1+exp(-|z|)).
double bce_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_head_target_shapes(const HeadOutputs& heads, const AnchorTargets& targets) {
  if (heads.grid_h != targets.grid_h || heads.grid_w != targets.grid_w) {
    throw ShapeError("detection loss: head grid does not match target grid");
  }
  const std::size_t hw = heads.cells();
  if (heads.objectness.size() != hw || heads.box_delta.size() != 4 * hw ||
      targets.labels.size() != hw || targets.box_delta.size() != 4 * hw) {
    throw ShapeError("detection loss: head/target buffers do not match the grid");
  }
}

void check_same_grid(const HeadOutputs& a, const HeadOutputs& b) {
  if (!a.same_grid(b)) {
    throw ShapeError("detection consistency: anchor grids differ");
  }
  const std::size_t hw = a.cells();
  if (a.objectness.size() != hw || b.objectness.size() != hw ||
      a.box_delta.size() != 4 * hw || b.box_delta.size() != 4 * hw) {
    throw ShapeError("detection consistency: head buffers do not match the grid");
  }
}

}  // namespace

std::size_t AnchorTargets::positives() const {
  std::size_t n = 0;
  for (const std::int8_t l : labels) n += (l == 1);
  return n;
}

void LossWeights::validate() const {
  if (lambda < 0.0) throw ConfigError("loss weight lambda must be >= 0");
}

double l_pix(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "l_pix");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    sum += std::abs(pred.data[i] - target.data[i]);
  }
  return sum / static_cast<double>(pred.data.size());
}

Image l_pix_backward(const Image& pred, const Image& target) {
  require_same_shape(pred, target, "l_pix_backward");
  Image grad(pred.height, pred.width, pred.channels);
  const double inv_n = 1.0 / static_cast<double>(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    grad.data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
  }
  return grad;
}

double l_pix_cons(const Image& a, const Image& b) { return l_pix(a, b); }

double smooth_l1_value(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) { return std::clamp(x, -1.0, 1.0); }

double smooth_l1(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double sum = 0.0;
  for (const double v : x) {
    if (!std::isfinite(v)) throw NumericError("smooth_l1: non-finite input");
    sum += smooth_l1_value(v);
  }
  return sum / static_cast<double>(x.size());
}

DetLossParts l_det_parts(const HeadOutputs& heads, const AnchorTargets& targets) {
  check_head_target_shapes(heads, targets);
  const std::size_t hw = heads.cells();

  double pos_sum = 0.0, neg_sum = 0.0;
  std::size_t pos_n = 0, neg_n = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    const std::int8_t label = targets.labels[i];
    if (label == 1) {
      pos_sum += bce_logit(heads.objectness[i], 1.0);
      ++pos_n;
    } else if (label == 0) {
      neg_sum += bce_logit(heads.objectness[i], 0.0);
      ++neg_n;
    }
  }

  DetLossParts parts;
  if (pos_n > 0 && neg_n > 0) {
    parts.cls = 0.5 * pos_sum / static_cast<double>(pos_n) +
                0.5 * neg_sum / static_cast<double>(neg_n);
  } else if (pos_n > 0) {
    parts.cls = pos_sum / static_cast<double>(pos_n);
  } else if (neg_n > 0) {
    parts.cls = neg_sum / static_cast<double>(neg_n);
  }

  if (pos_n == 0) {
    parts.no_positives = true;
    return parts;
  }
  double reg_sum = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (targets.labels[i] != 1) continue;
    for (int c = 0; c < 4; ++c) {
      const std::size_t at = static_cast<std::size_t>(c) * hw + i;
      const double r = heads.box_delta[at] - targets.box_delta[at];
      if (!std::isfinite(r)) throw NumericError("l_det: non-finite regression residual");
      reg_sum += smooth_l1_value(r);
    }
  }
  parts.reg = reg_sum / static_cast<double>(4 * pos_n);
  return parts;
}

double l_det(const HeadOutputs& heads, const AnchorTargets& targets) {
  return l_det_parts(heads, targets).total();
}

HeadOutputs l_det_backward(const HeadOutputs& heads, const AnchorTargets& targets) {
  check_head_target_shapes(heads, targets);
  const std::size_t hw = heads.cells();

  std::size_t pos_n = 0, neg_n = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (targets.labels[i] == 1) ++pos_n;
    if (targets.labels[i] == 0) ++neg_n;
  }
  double pos_w = 0.0, neg_w = 0.0;
  if (pos_n > 0 && neg_n > 0) {
    pos_w = 0.5 / static_cast<double>(pos_n);
    neg_w = 0.5 / static_cast<double>(neg_n);
  } else if (pos_n > 0) {
    pos_w = 1.0 / static_cast<double>(pos_n);
  } else if (neg_n > 0) {
    neg_w = 1.0 / static_cast<double>(neg_n);
  }

  HeadOutputs grad;
  grad.grid_h = heads.grid_h;
  grad.grid_w = heads.grid_w;
  grad.objectness.assign(hw, 0.0);
  grad.box_delta.assign(4 * hw, 0.0);

  for (std::size_t i = 0; i < hw; ++i) {
    const std::int8_t label = targets.labels[i];
    if (label == 1) {
      grad.objectness[i] = pos_w * (sigmoid(heads.objectness[i]) - 1.0);
    } else if (label == 0) {
      grad.objectness[i] = neg_w * sigmoid(heads.objectness[i]);
    }
  }
  if (pos_n > 0) {
    const double reg_w = 1.0 / static_cast<double>(4 * pos_n);
    for (std::size_t i = 0; i < hw; ++i) {
      if (targets.labels[i] != 1) continue;
      for (int c = 0; c < 4; ++c) {
        const std::size_t at = static_cast<std::size_t>(c) * hw + i;
        grad.box_delta[at] =
            reg_w * smooth_l1_grad(heads.box_delta[at] - targets.box_delta[at]);
      }
    }
  }
  return grad;
}

double l_det_cons(const HeadOutputs& a, const HeadOutputs& b) {
  check_same_grid(a, b);
  const std::size_t hw = a.cells();
  const std::size_t n = 5 * hw;
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    const double r = a.objectness[i] - b.objectness[i];
    if (!std::isfinite(r)) throw NumericError("l_det_cons: non-finite objectness residual");
    sum += smooth_l1_value(r);
  }
  for (std::size_t i = 0; i < 4 * hw; ++i) {
    const double r = a.box_delta[i] - b.box_delta[i];
    if (!std::isfinite(r)) throw NumericError("l_det_cons: non-finite regression residual");
    sum += smooth_l1_value(r);
  }
  return sum / static_cast<double>(n);
}

void l_det_cons_backward(const HeadOutputs& a, const HeadOutputs& b,
                         HeadOutputs* grad_a, HeadOutputs* grad_b) {
  check_same_grid(a, b);
  const std::size_t hw = a.cells();
  const std::size_t n = 5 * hw;
  const auto init = [&](HeadOutputs* g) {
    if (!g) return;
    g->grid_h = a.grid_h;
    g->grid_w = a.grid_w;
    g->objectness.assign(hw, 0.0);
    g->box_delta.assign(4 * hw, 0.0);
  };
  init(grad_a);
  init(grad_b);
  if (n == 0) return;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < hw; ++i) {
    const double g = inv_n * smooth_l1_grad(a.objectness[i] - b.objectness[i]);
    if (grad_a) grad_a->objectness[i] = g;
    if (grad_b) grad_b->objectness[i] = -g;
  }
  for (std::size_t i = 0; i < 4 * hw; ++i) {
    const double g = inv_n * smooth_l1_grad(a.box_delta[i] - b.box_delta[i]);
    if (grad_a) grad_a->box_delta[i] = g;
    if (grad_b) grad_b->box_delta[i] = -g;
  }
}

LossReport total_loss(double l_pix_value, double l_pix_cons_value, double l_det_value,
                      double l_det_cons_value, const LossWeights& weights,
                      bool no_positive_anchors) {
  weights.validate();
  if (l_pix_value < 0.0 || l_pix_cons_value < 0.0 || l_det_value < 0.0 ||
      l_det_cons_value < 0.0) {
    throw std::logic_error("total_loss: negative loss component");
  }
  LossReport report;
  report.l_pix = l_pix_value;
  report.l_pix_cons = l_pix_cons_value;
  report.l_det = l_det_value;
  report.l_det_cons = l_det_cons_value;
  report.no_positive_anchors = no_positive_anchors;
  report.total = l_pix_value + l_pix_cons_value +
                 weights.lambda * (l_det_value + l_det_cons_value);
  return report;
}

}  // namespace nightlift
