// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference verification of tape gradients (64-bit only).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::size_t max_coords = 200;  // per group
  std::uint64_t seed = 0;
  // A failing coordinate whose central differences at step and step/4
  // disagree, or whose one-sided slopes disagree, sits on a kink (ReLU,
  // max-pool switch); it is replaced by another sample. The check fails if more than this fraction is skipped.
  double max_skip_fraction = 0.1;
};

struct ParamGroup {
  std::string name;
  std::vector<Parameter<double>*> params;
};

struct GradCheckGroup {
  std::string name;
  std::size_t coords = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "param[index]"
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string failure;
};

/// Builds the scalar loss on the given tape.
using LossFn = std::function<Var<double>(Tape<double>&)>;

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

GradCheckReport grad_check(const LossFn& loss, const std::vector<ParamGroup>& groups,
                           const GradCheckOptions& opts = {});

/// One group per trainable parameter.
GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& opts = {});

}  // namespace mmfuse
