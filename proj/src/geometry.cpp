#include "atoms/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "atoms/error.hpp"

namespace atoms {

namespace {

Index numerical_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  return qr.rank();
}

void require_same_dim(Index expected, Index actual, const char* what) {
  if (expected != actual) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": expected dimension " + std::to_string(expected) +
                    ", got " + std::to_string(actual));
  }
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

AtomSet::AtomSet(Matrix data, std::optional<double> epsilon)
    : data_(std::move(data)), epsilon_(epsilon) {
  if (!data_.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "atom set contains non-finite entries");
  }
  for (Index j = 0; j < data_.cols(); ++j) {
    if (data_.col(j).squaredNorm() == 0.0) {
      throw Error(ErrorCode::ZeroVector, "atom " + std::to_string(j) + " is the zero vector");
    }
  }
  rank_ = numerical_rank(data_);
}

AtomSet AtomSet::with_epsilon(double eps) const {
  AtomSet copy = *this;
  copy.epsilon_ = eps;
  return copy;
}

MetricMatrix metric_from_atoms(const AtomSet& atoms, const MetricOptions& options) {
  const Index h = atoms.ambient_dim();
  if (!atoms.full_row_rank()) {
    throw Error(ErrorCode::RankDeficient, "atom set has rank " + std::to_string(atoms.rank()) +
                                              " < ambient dimension " + std::to_string(h));
  }
  const Matrix& d = atoms.data();
  Matrix ddt = Matrix::Zero(h, h);
  ddt.selfadjointView<Eigen::Lower>().rankUpdate(d);
  ddt = ddt.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Matrix> gram_eig(ddt);
  const double lo = gram_eig.eigenvalues().minCoeff();
  const double hi = gram_eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > options.condition_cap) {
    throw Error(ErrorCode::IllConditioned,
                "condition number of D D^T is " + std::to_string(hi / lo) + ", cap " +
                    std::to_string(options.condition_cap));
  }

  MetricMatrix metric;
  metric.source_rank = atoms.rank();
  Eigen::LLT<Matrix> llt(ddt);
  if (llt.info() == Eigen::Success) {
    metric.s_tilde = llt.solve(Matrix::Identity(h, h));
  } else {
    const Matrix& v = gram_eig.eigenvectors();
    metric.s_tilde = v * gram_eig.eigenvalues().cwiseInverse().asDiagonal() * v.transpose();
  }
  metric.s_tilde = symmetrized(metric.s_tilde);

  Eigen::SelfAdjointEigenSolver<Matrix> s_eig(metric.s_tilde);
  const Vector& lambda = s_eig.eigenvalues();
  if (lambda.minCoeff() < options.eigen_floor * lambda.maxCoeff()) {
    throw Error(ErrorCode::IllConditioned, "metric eigenvalue below relative floor");
  }
  const Matrix& v = s_eig.eigenvectors();
  metric.sqrt = symmetrized(v * lambda.cwiseSqrt().asDiagonal() * v.transpose());
  return metric;
}

AtomSet normalize_atoms(const AtomSet& atoms, const MetricMatrix& metric) {
  require_same_dim(atoms.ambient_dim(), metric.dim(), "normalize_atoms");
  Matrix mapped = metric.sqrt * atoms.data();
  mapped.colwise().normalize();
  return AtomSet(std::move(mapped), atoms.epsilon());
}

Matrix raw_gram(const AtomSet& atoms, const MetricMatrix& metric) {
  require_same_dim(atoms.ambient_dim(), metric.dim(), "raw_gram");
  const Matrix& d = atoms.data();
  return symmetrized(d.transpose() * (metric.s_tilde * d));
}

GramReport naip_gram(const AtomSet& atoms, const MetricOptions& options) {
  // Rank and conditioning checks only; G = D^T (D D^T)^{-1} D = Q Q^T for D^T = QR.
  metric_from_atoms(atoms, options);
  const Matrix& d = atoms.data();
  const Eigen::HouseholderQR<Matrix> qr(d.transpose());
  const Matrix q = qr.householderQ() * Matrix::Identity(d.cols(), d.rows());
  GramReport report;
  report.gram = symmetrized(q * q.transpose());
  const Vector scale = report.gram.diagonal().cwiseSqrt().cwiseInverse();
  report.gram = scale.asDiagonal() * report.gram * scale.asDiagonal();
  report.gram.diagonal().setOnes();

  const Index n = report.gram.cols();
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  if (pairs > 0) {
    double sum = 0.0, sum_sq = 0.0, max_abs = 0.0;
    for (Index j = 1; j < n; ++j) {
      for (Index i = 0; i < j; ++i) {
        const double g = report.gram(i, j);
        sum += g;
        sum_sq += g * g;
        max_abs = std::max(max_abs, std::abs(g));
      }
    }
    report.offdiag_mean = sum / pairs;
    report.offdiag_std =
        std::sqrt(std::max(0.0, sum_sq / pairs - report.offdiag_mean * report.offdiag_mean));
    report.max_abs_offdiag = max_abs;
  }
  return report;
}

AngleStats angle_stats(const Matrix& vectors, const MetricMatrix* metric, double bin_width_deg) {
  if (vectors.cols() < 2) {
    throw Error(ErrorCode::InvalidArgument, "angle_stats needs at least two vectors");
  }
  if (!(bin_width_deg > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "histogram bin width must be positive");
  }
  Matrix inner;
  if (metric != nullptr) {
    require_same_dim(vectors.rows(), metric->dim(), "angle_stats");
    inner = vectors.transpose() * (metric->s_tilde * vectors);
  } else {
    inner = vectors.transpose() * vectors;
  }
  const Index n = vectors.cols();
  Vector norms(n);
  for (Index i = 0; i < n; ++i) {
    if (!(inner(i, i) > 0.0)) {
      throw Error(ErrorCode::ZeroVector, "vector " + std::to_string(i) + " has zero norm");
    }
    norms(i) = std::sqrt(inner(i, i));
  }

  AngleStats stats;
  stats.bin_width_deg = bin_width_deg;
  const auto bins = static_cast<std::size_t>(std::ceil(180.0 / bin_width_deg));
  stats.histogram.assign(bins, 0);
  stats.angles_deg.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double c = std::clamp(inner(i, j) / (norms(i) * norms(j)), -1.0, 1.0);
      const double deg = std::acos(c) * 180.0 / std::numbers::pi;
      stats.angles_deg.push_back(deg);
      sum += deg;
      const auto bin = std::min(bins - 1, static_cast<std::size_t>(deg / bin_width_deg));
      ++stats.histogram[bin];
    }
  }
  stats.centroid_deg = sum / static_cast<double>(stats.angles_deg.size());
  return stats;
}

Vector atom_match(const AtomSet& atoms, const MetricMatrix& metric, const Vector& x) {
  require_same_dim(atoms.ambient_dim(), metric.dim(), "atom_match metric");
  require_same_dim(atoms.ambient_dim(), x.size(), "atom_match query");
  return atoms.data().transpose() * (metric.s_tilde * x);
}

Matrix atom_match_batch(const AtomSet& atoms, const MetricMatrix& metric, const Matrix& xs) {
  require_same_dim(atoms.ambient_dim(), metric.dim(), "atom_match metric");
  require_same_dim(atoms.ambient_dim(), xs.rows(), "atom_match query");
  return atoms.data().transpose() * (metric.s_tilde * xs);
}

}  // namespace atoms
