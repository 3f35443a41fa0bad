#include "atoms/certificates.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <string>

#include "atoms/error.hpp"
#include "atoms/sparse_code.hpp"

namespace atoms {

namespace {

void require_normalized(const AtomSet& atoms, double tolerance) {
  const Matrix& d = atoms.data();
  for (Index j = 0; j < d.cols(); ++j) {
    if (std::abs(d.col(j).norm() - 1.0) > tolerance) {
      throw Error(ErrorCode::NotNormalized,
                  "column " + std::to_string(j) + " has norm " + std::to_string(d.col(j).norm()));
    }
  }
}

double sorted_quantile(const std::vector<double>& sorted, double alpha) {
  const double pos = static_cast<double>(sorted.size() - 1) * alpha;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::uint64_t pair_count(Index n) {
  const auto m = static_cast<std::uint64_t>(n);
  return m < 2 ? 0 : m * (m - 1) / 2;
}

// Visits pairs (i, j), i < j, in lexicographic order. In sampled mode a uniform
// subset without replacement is drawn by selection sampling.
template <typename Visit>
PairMode for_each_pair(Index n, const CoherenceOptions& options, Visit&& visit) {
  const std::uint64_t total = pair_count(n);
  const bool sampled = n > options.exhaustive_limit && options.sampled_pairs < total;
  if (!sampled) {
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) visit(i, j);
    return PairMode::Exhaustive;
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uint64_t needed = options.sampled_pairs;
  std::uint64_t seen = 0;
  for (Index i = 0; i < n && needed > 0; ++i) {
    for (Index j = i + 1; j < n && needed > 0; ++j, ++seen) {
      const double remaining = static_cast<double>(total - seen);
      if (unit(rng) * remaining < static_cast<double>(needed)) {
        visit(i, j);
        --needed;
      }
    }
  }
  return PairMode::Sampled;
}

}  // namespace

CoherenceReport coherence(const AtomSet& normalized_atoms, const CoherenceOptions& options) {
  require_normalized(normalized_atoms, options.norm_tolerance);
  const Matrix& d = normalized_atoms.data();
  const Index n = d.cols();
  CoherenceReport report;
  if (options.retain_samples) report.offdiag_samples.emplace();

  const bool dense = n <= options.exhaustive_limit;
  const Matrix gram = dense ? Matrix(d.transpose() * d) : Matrix();
  double best = -1.0;
  report.mode = for_each_pair(n, options, [&](Index i, Index j) {
    const double c = dense ? std::abs(gram(i, j)) : std::abs(d.col(i).dot(d.col(j)));
    if (report.offdiag_samples) report.offdiag_samples->push_back(c);
    if (c > best) {
      best = c;
      report.argmax_pair = {i, j};
    }
  });
  report.mu = std::clamp(std::max(best, 0.0), 0.0, 1.0);
  return report;
}

std::vector<double> pairwise_coherences(const AtomSet& normalized_atoms,
                                        const CoherenceOptions& options) {
  CoherenceOptions retained = options;
  retained.retain_samples = true;
  CoherenceReport report = coherence(normalized_atoms, retained);
  return std::move(*report.offdiag_samples);
}

RipCertificate rip_bound(double mu, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidSparsity, "sparsity must be at least 1");
  if (!(mu >= 0.0 && mu <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "coherence must lie in [0, 1]");
  }
  RipCertificate cert;
  cert.k = k;
  cert.bound = static_cast<double>(k - 1) * mu;
  cert.certified = cert.bound < 1.0;
  return cert;
}

bool rip_sandwich_check(const AtomSet& normalized_atoms, const SparseCode& code, double mu) {
  if (code.size() != normalized_atoms.count()) {
    throw Error(ErrorCode::DimensionMismatch, "code length does not match atom count");
  }
  const double k_minus_one = std::max<double>(0.0, static_cast<double>(code.k()) - 1.0);
  const double norm_sq = code.values().squaredNorm();
  const double image_sq = (normalized_atoms.data() * code.values()).squaredNorm();
  const double slack = 1e-9 * std::max(1.0, norm_sq);
  const double lower = (1.0 - k_minus_one * mu) * norm_sq;
  const double upper = (1.0 + k_minus_one * mu) * norm_sq;
  return image_sq >= lower - slack && image_sq <= upper + slack;
}

bool uniqueness_certified(double mu, double k) {
  const double denom = 2.0 * k - 1.0;
  // Codes with K < 1/2 (in practice K = 0) are trivially unique.
  if (denom <= 0.0) return true;
  return mu < 1.0 / denom;
}

double linear_quantile(std::span<const double> samples, double alpha) {
  if (samples.empty()) throw Error(ErrorCode::EmptySamples, "quantile of an empty sample");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "quantile level must lie in [0, 1]");
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted_quantile(sorted, alpha);
}

QuantileReport max_uniqueness_quantile(std::span<const double> coherence_samples,
                                       std::span<const double> sparsity_samples,
                                       const QuantileSearchOptions& options) {
  if (coherence_samples.empty() || sparsity_samples.empty()) {
    throw Error(ErrorCode::EmptySamples, "quantile search needs coherence and sparsity samples");
  }
  std::vector<double> mu(coherence_samples.begin(), coherence_samples.end());
  std::vector<double> ks(sparsity_samples.begin(), sparsity_samples.end());
  std::sort(mu.begin(), mu.end());
  std::sort(ks.begin(), ks.end());

  auto evaluate = [&](double alpha) {
    QuantileReport r;
    r.q = alpha;
    r.mu_q = sorted_quantile(mu, alpha);
    r.k_q = sorted_quantile(ks, alpha);
    r.satisfied = uniqueness_certified(r.mu_q, r.k_q);
    return r;
  };

  QuantileReport top = evaluate(options.upper);
  if (top.satisfied) return top;
  QuantileReport lo = evaluate(0.0);
  if (!lo.satisfied) return lo;

  double hi_alpha = options.upper;
  for (int it = 0; it < options.max_iterations && hi_alpha - lo.q > options.tolerance; ++it) {
    const double mid = 0.5 * (lo.q + hi_alpha);
    QuantileReport r = evaluate(mid);
    if (r.satisfied) {
      lo = r;
    } else {
      hi_alpha = mid;
    }
  }
  return lo;
}

void write_quantile_table(std::ostream& out, std::span<const QuantileRow> rows) {
  out << "layer q mu_q K_q satisfied\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  for (const auto& row : rows) {
    out << row.layer << ' ' << std::fixed << std::setprecision(6) << row.report.q << ' '
        << std::setprecision(5) << row.report.mu_q << ' ' << std::setprecision(3)
        << row.report.k_q << ' ' << (row.report.satisfied ? "yes" : "no") << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace atoms
