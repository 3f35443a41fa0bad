#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atoms/geometry.hpp"
#include "atoms/sparse_code.hpp"

namespace atoms {

/// Ground-truth generation parameters.
struct SynthSpec {
  Index h = 64;
  Index n = 256;
  Index k = 5;
  double delta_min = 0.5;
  double delta_max = 1.0;
  Index samples = 1000;
  std::uint64_t seed = 0;
  // Resample columns until the measured coherence is at most this value.
  std::optional<double> epsilon_target;
  // Square dictionaries only: emit an orthonormal basis (coherence 0).
  bool orthonormal = false;
  // Optional mixture over sparsity levels, as (K, weight) pairs. Empty means
  // every code has exactly `k` nonzeros.
  std::vector<std::pair<Index, double>> k_distribution;

  /// Throws InvalidSpec when an invariant is violated.
  void validate() const;
};

/// Collection of H-dimensional representations stored as matrix columns.
struct ActivationSet {
  Matrix data;  // H x N
  nlohmann::json metadata = nlohmann::json::object();

  Index dim() const noexcept { return data.rows(); }
  Index size() const noexcept { return data.cols(); }
};

struct GenerationOptions {
  int max_rounds = 1000;
  // Candidate replacements drawn per round; the best one is kept if it helps.
  int draws_per_round = 4;
  // Rounds without improvement before the whole dictionary is redrawn.
  int restart_after = 100;
  int max_rank_retries = 100;
};

/// Gaussian atoms normalized to unit Euclidean norm, with the normalized
/// atomic coherence recorded as epsilon().
AtomSet gen_atoms(const SynthSpec& spec, const GenerationOptions& options = {});

/// One code per sample; each draws its own engine from (seed, index).
std::vector<SparseCode> gen_codes(const SynthSpec& spec);

ActivationSet gen_dataset(const AtomSet& atoms, const std::vector<SparseCode>& codes);

/// delta_min > epsilon (2K - 1) delta_max.
bool feasibility(double epsilon, const SynthSpec& spec);

/// Lower bound on the coherence of n unit vectors in R^H.
double welch_bound(Index h, Index n);

/// Coherence of the normalized atoms of a full-row-rank dictionary.
double measured_coherence(const AtomSet& atoms);

}  // namespace atoms
