#pragma once

// Central finite-difference checks of reverse-mode gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relgraph/autodiff.hpp"
#include "relgraph/rng.hpp"

namespace relgraph::gradcheck {

using ad::Tensor;

struct Options {
  std::size_t probes = 100;
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Floor of the relative-error denominator.
  double floor = 1e-3;
  /// Largest share of probes that may be redrawn because they straddle a
  /// kink or discontinuity.
  double max_skip_fraction = 0.25;
};

struct Result {
  std::string name;
  std::size_t probes = 0;
  std::size_t failures = 0;
  /// Probes redrawn because the one-sided differences disagreed.
  std::size_t skipped = 0;
  double max_error = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Checks d f / d inputs at random entries. `f` must rebuild its graph from
/// the current values of `inputs` on every call and be deterministic. A probe
/// whose forward and backward one-sided differences disagree by more than
/// the tolerance sits on a non-smooth point and is redrawn.
Result check(const std::string& name, const std::vector<Tensor>& inputs, const std::function<Tensor()>& f,
             std::uint64_t seed, const Options& opt = {});

/// Module names accepted by `run_suite`.
std::vector<std::string> suite_names();
/// Gradient checks for one module ("autodiff", "nn", "backbone",
/// "proposal", "pool", "relation", "losses", "model") or "all".
std::vector<Result> run_suite(const std::string& module, std::uint64_t seed, const Options& opt = {});

}  // namespace relgraph::gradcheck
