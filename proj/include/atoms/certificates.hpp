#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "atoms/geometry.hpp"

namespace atoms {

class SparseCode;

enum class PairMode { Exhaustive, Sampled };

struct CoherenceOptions {
  // Dictionaries with more columns than this are scanned by sampling pairs.
  Index exhaustive_limit = 4096;
  std::uint64_t sampled_pairs = 10'000'000;
  std::uint64_t seed = 0;
  bool retain_samples = false;
  double norm_tolerance = 1e-8;
};

struct CoherenceReport {
  double mu = 0.0;
  std::pair<Index, Index> argmax_pair{0, 0};
  PairMode mode = PairMode::Exhaustive;
  std::optional<std::vector<double>> offdiag_samples;
};

struct RipCertificate {
  int k = 1;
  double bound = 0.0;
  bool certified = true;
};

struct QuantileReport {
  double q = 0.0;
  double mu_q = 0.0;
  double k_q = 0.0;
  bool satisfied = false;
};

/// Maximum |<d_i, d_j>| over distinct unit-norm columns. The argmax is the
/// lexicographically smallest (i, j) attaining the maximum.
CoherenceReport coherence(const AtomSet& normalized_atoms, const CoherenceOptions& options = {});

RipCertificate rip_bound(double mu, int k);

/// Checks (1-(K-1)mu)|d|^2 <= |D d|^2 <= (1+(K-1)mu)|d|^2 with K = |supp(d)|.
bool rip_sandwich_check(const AtomSet& normalized_atoms, const SparseCode& code, double mu);

/// mu < 1/(2K-1), strict. K may be fractional.
bool uniqueness_certified(double mu, double k);

/// Linear-interpolation quantile at position (len-1)*alpha of the sorted samples.
double linear_quantile(std::span<const double> samples, double alpha);

struct QuantileSearchOptions {
  double upper = 0.999999;
  double tolerance = 1e-7;
  int max_iterations = 60;
};

/// Largest alpha in [0, upper] such that Q(mu, alpha) < 1/(2 Q(K, alpha) - 1).
QuantileReport max_uniqueness_quantile(std::span<const double> coherence_samples,
                                       std::span<const double> sparsity_samples,
                                       const QuantileSearchOptions& options = {});

/// Pairwise |<d_i, d_j>| for all i < j, or a uniform sample of pairs for huge sets.
std::vector<double> pairwise_coherences(const AtomSet& normalized_atoms,
                                        const CoherenceOptions& options = {});

struct QuantileRow {
  std::string layer;
  QuantileReport report;
};

/// Whitespace-separated table with header "layer q mu_q K_q satisfied".
void write_quantile_table(std::ostream& out, std::span<const QuantileRow> rows);

}  // namespace atoms
