#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oex/autodiff.hpp"

namespace oex {

struct GradcheckCase {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_input;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradcheckSummary {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
  std::string worst_case;
  std::size_t failures = 0;

  bool passed() const { return failures == 0; }
};

// Random small networks paired with every training objective and the
// input gradient used by extrapolation, plus expressions covering each
// primitive. `faulty_op` corrupts one primitive's backward rule.
GradcheckSummary run_gradcheck_suite(std::size_t cases = 100, std::uint64_t seed = 0, double tolerance = 1e-6,
                                     std::optional<ad::Op> faulty_op = std::nullopt);

std::optional<ad::Op> parse_op(const std::string& name);

}  // namespace oex
