#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rescbm {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct GradientSuiteOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  double tolerance = 1e-5;
  double step = 1e-6;
  /// Added to one analytic gradient coordinate per instance. Nonzero only in mutation tests.
  double perturbation = 0.0;
};

struct GradientSuiteReport {
  double max_error_pcbm = 0.0;       // CE + elastic net of the concept head
  double max_error_residual = 0.0;   // residual head and residual vectors
  double max_error_discovery = 0.0;  // psi_c, psi_d and the discovered vector
  bool passed = false;
};

/// Random instances (batch <= 16, dim <= 32, classes <= 5) of the three training objectives;
/// analytic gradients against central differences of a loop-based forward pass.
GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options = {});

struct CueFixture {
  double accuracy;
  std::size_t n_concepts;
  double avg_letters;
  double expected;
};

/// Published CUE values whose inputs reproduce them.
const std::vector<CueFixture>& cue_fixtures();

CheckResult check_gradients(const GradientSuiteOptions& options = {});
CheckResult check_cue_fixtures();
/// D = 0 residual training against PCBM on a synthetic task: psi_c and predictions byte-equal.
CheckResult check_reduction(std::uint64_t seed = 3);

std::vector<CheckResult> run_selfcheck(const GradientSuiteOptions& options = {});

}  // namespace rescbm
