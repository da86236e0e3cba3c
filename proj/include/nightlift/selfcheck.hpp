#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nightlift/filtering.hpp"
#include "nightlift/image.hpp"

namespace nightlift {

// Fault-injection points for exercising the selfcheck itself; production
// callers pass nothing and get the real implementations.
struct SelfcheckHooks {
  std::function<Image(const Image&, const KernelField&, PaddingMode)> filter;
};

struct SelfcheckEntry {
  std::string name;
  bool passed = false;
  std::string detail;  // measured values, empty when unremarkable
};

struct SelfcheckReport {
  std::vector<SelfcheckEntry> entries;

  bool all_passed() const;
};

// Fast invariant sweep over the numeric core: filter identity, filter
// gradients vs finite differences, Dirichlet simplex, smooth-L1 knee, IoU
// reference cases, RNG reproducibility. Failures are reported, not thrown.
SelfcheckReport run_selfcheck(const SelfcheckHooks* hooks = nullptr);

}  // namespace nightlift
