#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "atoms/geometry.hpp"
#include "atoms/sparse_code.hpp"

namespace atoms {

struct RecoveryResult {
  Vector solution;
  double objective = 0.0;  // l1 norm of solution
  double residual = 0.0;   // |D x - m|_2, recomputed on exit
  bool converged = false;
  int iterations = 0;
};

struct BasisPursuitOptions {
  double tol = 1e-8;
  int max_iterations = 50'000;
  int power_iterations = 100;
  // Refit the detected support by least squares once the splitting converges.
  bool polish = true;
};

/// min |x|_1 subject to D x = m, by alternating projection onto the affine
/// constraint and soft-thresholding. Returns the best iterate with
/// converged = false when the iteration budget is exhausted.
RecoveryResult basis_pursuit(const AtomSet& normalized_atoms, const Vector& measurement,
                             const BasisPursuitOptions& options = {});

/// Exhaustive search over supports of size <= k_max. Returns the feasible
/// solution with the smallest support, ties broken by l1 norm and then by
/// lexicographic support. Limited to n <= 24 and k_max <= 4.
RecoveryResult l0_oracle(const AtomSet& normalized_atoms, const Vector& measurement, int k_max,
                         double feasibility_tol = 1e-8);

struct RecoveryConfig {
  Index h = 32;
  Index n = 64;
  Index k = 2;
  int trials = 200;
  std::uint64_t seed = 0;
  std::optional<double> epsilon_target;
  double delta_min = 0.5;
  double delta_max = 1.0;
  double recovery_tol = 1e-6;
  BasisPursuitOptions solver;
  unsigned jobs = 1;
};

struct RecoveryTrial {
  int trial = 0;
  double mu = 0.0;
  double bound = 0.0;  // 1 / (2K - 1)
  bool certified = false;
  bool recovered = false;
  double residual = 0.0;
  double error_inf = 0.0;
  bool converged = false;
  std::optional<bool> oracle_agrees;
};

struct RecoveryReport {
  std::vector<RecoveryTrial> trials;
  int certified = 0;
  int recovered_certified = 0;
  int oracle_checked = 0;
  int oracle_agreed = 0;

  /// Fraction of certified trials recovered; empty when none were certified.
  std::optional<double> success_rate() const;
};

/// Planted-code recovery trials. The l0 oracle cross-check runs whenever
/// n <= 24 and K <= 4.
RecoveryReport recovery_experiment(const RecoveryConfig& config);

/// CSV with header trial,mu,bound,certified,recovered,residual.
void write_recovery_table(std::ostream& out, const RecoveryReport& report);

}  // namespace atoms
