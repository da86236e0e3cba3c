#include "nightlift/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "nightlift/boxes.hpp"
#include "nightlift/losses.hpp"
#include "nightlift/rng.hpp"

namespace nightlift {
namespace {

using FilterFn = std::function<Image(const Image&, const KernelField&, PaddingMode)>;

Image random_image(int h, int w, int c, Rng& rng) {
  Image img(h, w, c);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

SelfcheckEntry check_filter_identity(const FilterFn& filter) {
  SelfcheckEntry e{"filter-identity", false, ""};
  Rng rng(101);
  const Image img = random_image(12, 10, 3, rng);
  const KernelField delta = KernelField::delta(5, 12, 10);
  const Image out = filter(img, delta, PaddingMode::kReplicate);
  double max_err = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    max_err = std::max(max_err, std::abs(out.data[i] - img.data[i]));
  }
  e.passed = max_err <= 1e-12;
  std::ostringstream os;
  os << "delta-kernel max deviation " << max_err;
  e.detail = os.str();
  return e;
}

SelfcheckEntry check_filter_gradient(const FilterFn& filter) {
  SelfcheckEntry e{"filter-gradient", false, ""};
  Rng rng(202);
  const int h = 5, w = 6, k = 3;
  const Image img = random_image(h, w, 3, rng);
  KernelField kernels(k, h, w);
  for (double& v : kernels.data) v = rng.normal() * 0.3;
  Image upstream = random_image(h, w, 3, rng);

  Image grad_image(h, w, 3);
  KernelField grad_kernels(k, h, w);
  filter_gradients(img, kernels, upstream, PaddingMode::kReplicate, &grad_image, &grad_kernels);

  const auto loss = [&](const Image& x, const KernelField& kf) {
    const Image out = filter(x, kf, PaddingMode::kReplicate);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * upstream.data[i];
    return s;
  };

  const double step = 1e-6;
  double max_rel = 0.0;
  // Spot-check a spread of image pixels and kernel taps.
  for (std::size_t i = 0; i < img.data.size(); i += 17) {
    Image lo = img, hi = img;
    lo.data[i] -= step;
    hi.data[i] += step;
    const double fd = (loss(hi, kernels) - loss(lo, kernels)) / (2 * step);
    const double an = grad_image.data[i];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  for (std::size_t i = 0; i < kernels.data.size(); i += 41) {
    KernelField lo = kernels, hi = kernels;
    lo.data[i] -= step;
    hi.data[i] += step;
    const double fd = (loss(img, hi) - loss(img, lo)) / (2 * step);
    const double an = grad_kernels.data[i];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  e.passed = max_rel < 1e-5;
  std::ostringstream os;
  os << "max relative gradient error " << max_rel;
  e.detail = os.str();
  return e;
}

SelfcheckEntry check_dirichlet_simplex() {
  SelfcheckEntry e{"dirichlet-simplex", false, ""};
  Rng rng(303);
  double worst_sum_err = 0.0;
  bool nonneg = true;
  for (int trial = 0; trial < 200; ++trial) {
    const double alpha = trial % 2 == 0 ? 1.0 : 0.3;
    const std::vector<double> w = rng.dirichlet(3, alpha);
    double sum = 0.0;
    for (const double v : w) {
      nonneg = nonneg && v >= 0.0;
      sum += v;
    }
    worst_sum_err = std::max(worst_sum_err, std::abs(sum - 1.0));
  }
  e.passed = nonneg && worst_sum_err <= 1e-9;
  std::ostringstream os;
  os << "worst |sum-1| " << worst_sum_err << (nonneg ? "" : ", negative coefficient seen");
  e.detail = os.str();
  return e;
}

SelfcheckEntry check_smooth_l1_knee() {
  SelfcheckEntry e{"smooth-l1-knee", false, ""};
  const double at0 = smooth_l1_value(0.0);
  const double at1 = smooth_l1_value(1.0);
  const double atm1 = smooth_l1_value(-1.0);
  const double eps = 1e-8;
  const double jump = std::abs(smooth_l1_value(1.0 + eps) - smooth_l1_value(1.0 - eps));
  const double grad_jump = std::abs(smooth_l1_grad(1.0 + eps) - smooth_l1_grad(1.0 - eps));
  e.passed = at0 == 0.0 && std::abs(at1 - 0.5) <= 1e-15 && std::abs(atm1 - 0.5) <= 1e-15 &&
             jump <= 1e-7 && grad_jump <= 1e-7;
  std::ostringstream os;
  os << "f(0)=" << at0 << " f(1)=" << at1 << " knee jump " << jump;
  e.detail = os.str();
  return e;
}

SelfcheckEntry check_iou_cases() {
  SelfcheckEntry e{"iou-cases", false, ""};
  const Box a{0, 0, 1, 1};
  const Box b{2, 2, 3, 3};
  const Box c{0.5, 0, 1.5, 1};  // overlaps `a` by half a unit square
  const double same = iou(a, a);
  const double disjoint = iou(a, b);
  const double half = iou(a, c);
  e.passed = same == 1.0 && disjoint == 0.0 && std::abs(half - 1.0 / 3.0) <= 1e-12;
  std::ostringstream os;
  os << "iou(a,a)=" << same << " disjoint=" << disjoint << " half-overlap=" << half;
  e.detail = os.str();
  return e;
}

SelfcheckEntry check_rng_reproducibility() {
  SelfcheckEntry e{"rng-reproducibility", false, ""};
  Rng a(42), b(42);
  bool same = true;
  for (int i = 0; i < 64; ++i) {
    same = same && a.uniform() == b.uniform();
    same = same && a.normal() == b.normal();
    same = same && a.uniform_int(0, 999) == b.uniform_int(0, 999);
  }
  same = same && derive_seed(7, 1, 2, 3) == derive_seed(7, 1, 2, 3);
  same = same && derive_seed(7, 1, 2, 3) != derive_seed(7, 1, 2, 4);
  e.passed = same;
  e.detail = same ? "identical streams from identical seeds" : "streams diverged";
  return e;
}

}  // namespace

bool SelfcheckReport::all_passed() const {
  for (const auto& entry : entries) {
    if (!entry.passed) return false;
  }
  return true;
}

SelfcheckReport run_selfcheck(const SelfcheckHooks* hooks) {
  FilterFn filter = [](const Image& img, const KernelField& k, PaddingMode mode) {
    return apply_pixelwise_filter(img, k, mode);
  };
  if (hooks && hooks->filter) filter = hooks->filter;

  SelfcheckReport report;
  report.entries.push_back(check_filter_identity(filter));
  report.entries.push_back(check_filter_gradient(filter));
  report.entries.push_back(check_dirichlet_simplex());
  report.entries.push_back(check_smooth_l1_knee());
  report.entries.push_back(check_iou_cases());
  report.entries.push_back(check_rng_reproducibility());
  return report;
}

}  // namespace nightlift
