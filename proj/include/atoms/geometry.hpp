#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <vector>

namespace atoms {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dictionary D of shape H x n; each column is one atom.
///
/// Construction validates that every entry is finite and that no column is
/// identically zero, and caches the numerical rank. Full row rank is not
/// required here; operations that build a metric check it themselves.
class AtomSet {
 public:
  explicit AtomSet(Matrix data, std::optional<double> epsilon = std::nullopt);

  const Matrix& data() const noexcept { return data_; }
  Index ambient_dim() const noexcept { return data_.rows(); }
  Index count() const noexcept { return data_.cols(); }
  Index rank() const noexcept { return rank_; }
  bool full_row_rank() const noexcept { return rank_ == data_.rows(); }

  /// Coherence measured when the set was generated, if recorded.
  std::optional<double> epsilon() const noexcept { return epsilon_; }
  AtomSet with_epsilon(double eps) const;

 private:
  Matrix data_;
  Index rank_ = 0;
  std::optional<double> epsilon_;
};

/// S~ = (D D^T)^{-1} together with its symmetric square root.
struct MetricMatrix {
  Matrix s_tilde;
  Matrix sqrt;
  Index source_rank = 0;

  Index dim() const noexcept { return s_tilde.rows(); }
};

struct MetricOptions {
  double condition_cap = 1e12;
  // Eigenvalues of S~ below floor * max eigenvalue are rejected.
  double eigen_floor = 1e-12;
};

struct GramReport {
  Matrix gram;
  double offdiag_mean = 0.0;
  double offdiag_std = 0.0;
  double max_abs_offdiag = 0.0;
};

struct AngleStats {
  std::vector<double> angles_deg;
  double centroid_deg = 0.0;
  double bin_width_deg = 1.0;
  std::vector<std::size_t> histogram;
};

MetricMatrix metric_from_atoms(const AtomSet& atoms, const MetricOptions& options = {});

/// Maps every atom through S~^{1/2} and rescales it to unit Euclidean norm.
AtomSet normalize_atoms(const AtomSet& atoms, const MetricMatrix& metric);

/// Normalized atomic inner products between all atoms (unit diagonal).
GramReport naip_gram(const AtomSet& atoms, const MetricOptions& options = {});

/// D^T S~ D without normalization; an orthogonal projection of rank H.
Matrix raw_gram(const AtomSet& atoms, const MetricMatrix& metric);

/// Pairwise angles between the columns of `vectors`, measured under `metric`
/// when given and under the Euclidean inner product otherwise.
AngleStats angle_stats(const Matrix& vectors, const MetricMatrix* metric = nullptr,
                       double bin_width_deg = 1.0);

/// phi(x) = D^T S~ x: the atomic inner product of x with every atom.
Vector atom_match(const AtomSet& atoms, const MetricMatrix& metric, const Vector& x);

/// Batched atom_match over the columns of xs.
Matrix atom_match_batch(const AtomSet& atoms, const MetricMatrix& metric, const Matrix& xs);

}  // namespace atoms
