#include "atoms/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "atoms/certificates.hpp"
#include "atoms/error.hpp"
#include "atoms/random.hpp"
#include "atoms/synth.hpp"

namespace atoms {

namespace {

constexpr std::uint64_t kTrialStream = 0x7E;

double spectral_norm(const Matrix& d, int steps) {
  Vector v = Vector::Ones(d.cols()) / std::sqrt(static_cast<double>(d.cols()));
  double sigma = 0.0;
  for (int i = 0; i < steps; ++i) {
    Vector w = d.transpose() * (d * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    sigma = std::sqrt(norm);
  }
  return sigma;
}

Vector soft_threshold(const Vector& v, double kappa) {
  return v.unaryExpr([kappa](double a) {
    if (a > kappa) return a - kappa;
    if (a < -kappa) return a + kappa;
    return 0.0;
  });
}

RecoveryResult finish(const Matrix& d, const Vector& m, Vector x, bool converged, int iterations) {
  RecoveryResult r;
  r.residual = (d * x - m).norm();
  r.objective = x.lpNorm<1>();
  r.solution = std::move(x);
  r.converged = converged;
  r.iterations = iterations;
  return r;
}

// Least-squares fit of m on the columns in `support`; returns the full-length
// vector and the residual norm.
std::pair<Vector, double> fit_support(const Matrix& d, const Vector& m,
                                      const std::vector<Index>& support) {
  Vector x = Vector::Zero(d.cols());
  if (support.empty()) return {x, m.norm()};
  Matrix sub(d.rows(), static_cast<Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j) sub.col(static_cast<Index>(j)) = d.col(support[j]);
  const Vector coef = sub.colPivHouseholderQr().solve(m);
  for (std::size_t j = 0; j < support.size(); ++j) x(support[j]) = coef(static_cast<Index>(j));
  return {x, (sub * coef - m).norm()};
}

bool next_combination(std::vector<Index>& c, Index n) {
  const Index k = static_cast<Index>(c.size());
  for (Index i = k - 1; i >= 0; --i) {
    if (c[static_cast<std::size_t>(i)] < n - k + i) {
      ++c[static_cast<std::size_t>(i)];
      for (Index j = i + 1; j < k; ++j) c[static_cast<std::size_t>(j)] = c[static_cast<std::size_t>(j - 1)] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

RecoveryResult basis_pursuit(const AtomSet& normalized_atoms, const Vector& measurement,
                             const BasisPursuitOptions& options) {
  const Matrix& d = normalized_atoms.data();
  if (measurement.size() != d.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "measurement length does not match ambient dimension");
  }
  if (!(options.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "tol must be positive");
  if (!normalized_atoms.full_row_rank()) {
    throw Error(ErrorCode::RankDeficient, "constraint D x = m needs full-row-rank atoms");
  }

  const Index n = d.cols();
  const double scale = measurement.norm();
  if (scale == 0.0) return finish(d, measurement, Vector::Zero(n), true, 0);

  // Solve at unit measurement norm and rescale, so the iteration is
  // independent of the overall magnitude of m.
  const Vector m = measurement / scale;
  const Eigen::LLT<Matrix> gram(d * d.transpose());
  const Vector x_min_norm = d.transpose() * gram.solve(m);
  auto project = [&](const Vector& v) -> Vector {
    return v - d.transpose() * gram.solve(d * v) + x_min_norm;
  };

  const double sigma = spectral_norm(d, options.power_iterations);
  const double rho = std::max(sigma, 1e-12) * std::sqrt(static_cast<double>(d.rows())) /
                     std::sqrt(static_cast<double>(n));
  const double kappa = 1.0 / rho;

  Vector z = soft_threshold(x_min_norm, kappa);
  Vector u = Vector::Zero(n);
  Vector x = x_min_norm;
  bool converged = false;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    x = project(z - u);
    const Vector z_old = z;
    z = soft_threshold(x + u, kappa);
    u += x - z;
    const double primal = (x - z).lpNorm<Eigen::Infinity>();
    const double change = (z - z_old).lpNorm<Eigen::Infinity>();
    if (primal <= options.tol && change <= options.tol) {
      converged = true;
      ++it;
      break;
    }
  }

  // x is feasible by construction; z carries the sparsity pattern.
  Vector best = x;
  if (options.polish) {
    std::vector<Index> support;
    const double cut = std::max(1e3 * options.tol, 1e-9);
    for (Index i = 0; i < n; ++i) {
      if (std::abs(z(i)) > cut) support.push_back(i);
    }
    if (static_cast<Index>(support.size()) <= d.rows()) {
      auto [polished, res] = fit_support(d, m, support);
      if (res <= options.tol && polished.lpNorm<1>() <= x.lpNorm<1>() + 1e3 * options.tol) {
        best = std::move(polished);
      }
    }
  }
  best *= scale;
  RecoveryResult out = finish(d, measurement, std::move(best), false, it);
  out.converged = converged && out.residual <= options.tol * std::max(1.0, scale);
  return out;
}

RecoveryResult l0_oracle(const AtomSet& normalized_atoms, const Vector& measurement, int k_max,
                         double feasibility_tol) {
  const Matrix& d = normalized_atoms.data();
  const Index n = d.cols();
  if (measurement.size() != d.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "measurement length does not match ambient dimension");
  }
  if (k_max < 0) throw Error(ErrorCode::InvalidArgument, "k_max must be nonnegative");
  if (n > 24 || k_max > 4) {
    throw Error(ErrorCode::TooLarge, "l0_oracle is limited to n <= 24 and k_max <= 4 (got n=" +
                                         std::to_string(n) + ", k_max=" + std::to_string(k_max) + ")");
  }
  const double bound = feasibility_tol * std::max(1.0, measurement.norm());
  int checked = 0;
  for (Index k = 0; k <= std::min<Index>(k_max, n); ++k) {
    std::vector<Index> support(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) support[static_cast<std::size_t>(i)] = i;
    std::optional<Vector> best;
    double best_l1 = 0.0;
    do {
      ++checked;
      auto [x, res] = fit_support(d, measurement, support);
      if (res > bound) continue;
      const double l1 = x.lpNorm<1>();
      // Lexicographic enumeration: only a strictly smaller l1 displaces.
      if (!best || l1 < best_l1 - 1e-12 * std::max(1.0, best_l1)) {
        best = std::move(x);
        best_l1 = l1;
      }
    } while (k > 0 && next_combination(support, n));
    if (best) return finish(d, measurement, std::move(*best), true, checked);
  }
  throw Error(ErrorCode::Infeasible,
              "no support of size <= " + std::to_string(k_max) + " reproduces the measurement");
}

std::optional<double> RecoveryReport::success_rate() const {
  if (certified == 0) return std::nullopt;
  return static_cast<double>(recovered_certified) / static_cast<double>(certified);
}

RecoveryReport recovery_experiment(const RecoveryConfig& config) {
  if (config.trials < 0) throw Error(ErrorCode::InvalidSpec, "trial count must be nonnegative");
  SynthSpec base;
  base.h = config.h;
  base.n = config.n;
  base.k = config.k;
  base.samples = 1;
  base.delta_min = config.delta_min;
  base.delta_max = config.delta_max;
  base.epsilon_target = config.epsilon_target;
  base.validate();

  RecoveryReport report;
  report.trials.resize(static_cast<std::size_t>(config.trials));
  const bool oracle = config.n <= 24 && config.k <= 4;

  parallel_for(report.trials.size(), config.jobs, [&](std::size_t t) {
    SynthSpec spec = base;
    spec.seed = derive_seed(config.seed, kTrialStream, t);
    const AtomSet atoms = gen_atoms(spec);
    const std::vector<SparseCode> codes = gen_codes(spec);
    const AtomSet unit = normalize_atoms(atoms, metric_from_atoms(atoms));
    const Vector& delta = codes.front().values();
    const Vector m = unit.data() * delta;

    RecoveryTrial& trial = report.trials[t];
    trial.trial = static_cast<int>(t);
    trial.mu = coherence(unit).mu;
    trial.bound = 1.0 / (2.0 * static_cast<double>(config.k) - 1.0);
    trial.certified = uniqueness_certified(trial.mu, static_cast<double>(config.k));
    const RecoveryResult bp = basis_pursuit(unit, m, config.solver);
    trial.residual = bp.residual;
    trial.converged = bp.converged;
    trial.error_inf = (bp.solution - delta).lpNorm<Eigen::Infinity>();
    trial.recovered = trial.error_inf <= config.recovery_tol;
    if (oracle) {
      const RecoveryResult l0 = l0_oracle(unit, m, static_cast<int>(config.k));
      trial.oracle_agrees = (bp.solution - l0.solution).lpNorm<Eigen::Infinity>() <= config.recovery_tol;
    }
  });

  for (const RecoveryTrial& t : report.trials) {
    if (!t.certified) continue;
    ++report.certified;
    if (t.recovered) ++report.recovered_certified;
    if (t.oracle_agrees) {
      ++report.oracle_checked;
      if (*t.oracle_agrees) ++report.oracle_agreed;
    }
  }
  return report;
}

void write_recovery_table(std::ostream& out, const RecoveryReport& report) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out.precision(17);
  out << "trial,mu,bound,certified,recovered,residual\n";
  for (const RecoveryTrial& t : report.trials) {
    out << t.trial << ',' << t.mu << ',' << t.bound << ',' << (t.certified ? 1 : 0) << ','
        << (t.recovered ? 1 : 0) << ',' << t.residual << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace atoms
