#pragma once

#include <set>
#include <string>

#include "oex/autodiff.hpp"

namespace oex::ad {

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences with step h,
// coordinate by coordinate. The error of one coordinate is
// |analytic - numeric| / (|analytic| + 1e-12).
FiniteDiffReport finite_diff_report(const Expr& expr, const Bindings& bindings,
                                    const std::set<std::string, std::less<>>& wrt, double h,
                                    const BackwardOptions& options = {});

double finite_diff_check(const Expr& expr, const Bindings& bindings, const std::set<std::string, std::less<>>& wrt,
                         double h);

}  // namespace oex::ad
