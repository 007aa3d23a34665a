#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xvfg/autograd.hpp"

namespace xvfg {

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckStep = 1e-6;
/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradcheckFloor = 1e-3;

struct GradcheckResult {
  std::string module;
  std::string op;
  double max_rel_error = 0.0;
  std::string worst_tensor;  // input holding the worst element
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

double gradcheck_relative_error(double analytic, double numeric);

/// Compares the backward pass of `loss` against central finite differences
/// for every element of every input. `loss` must build its graph reading
/// the inputs through Tape::param and return a scalar.
GradcheckResult check_gradients(const std::string& module, const std::string& op,
                                const std::vector<Parameter*>& inputs,
                                const std::function<Var(Tape&)>& loss,
                                double step = kGradcheckStep, double tolerance = kGradcheckTolerance);

/// "tensor", "deform", "attention", "losses".
const std::vector<std::string>& gradcheck_modules();

/// Runs every case of a module on random inputs drawn from `seed`.
/// Throws std::invalid_argument for an unknown module.
std::vector<GradcheckResult> run_gradcheck(const std::string& module, std::uint64_t seed);

/// Squaring op whose backward rule is deliberately wrong (x instead of 2x);
/// used to prove the harness catches a broken rule.
Var faulty_square(const Var& x);
GradcheckResult run_faulty_fixture(std::uint64_t seed);

}  // namespace xvfg
