#include "atoms/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "atoms/certificates.hpp"
#include "atoms/error.hpp"
#include "atoms/random.hpp"

namespace atoms {

namespace {

constexpr std::uint64_t kAtomStream = 0xA7;
constexpr std::uint64_t kCodeStream = 0xC0;

void fill_unit_gaussian(Eigen::Ref<Vector> column, Engine& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  do {
    for (Index i = 0; i < column.size(); ++i) column(i) = normal(rng);
  } while (column.squaredNorm() == 0.0);
  column.normalize();
}

// Total amount by which off-diagonal |NAIP| values exceed the target, plus the
// columns taking part in at least one violation.
double excess(const Matrix& gram, double target, std::vector<Index>* offenders) {
  const Index n = gram.cols();
  double total = 0.0;
  std::vector<bool> hit(static_cast<std::size_t>(n), false);
  for (Index j = 1; j < n; ++j) {
    for (Index i = 0; i < j; ++i) {
      const double over = std::abs(gram(i, j)) - target;
      if (over > 0.0) {
        total += over;
        hit[static_cast<std::size_t>(i)] = hit[static_cast<std::size_t>(j)] = true;
      }
    }
  }
  if (offenders) {
    offenders->clear();
    for (Index j = 0; j < n; ++j)
      if (hit[static_cast<std::size_t>(j)]) offenders->push_back(j);
  }
  return total;
}

Matrix normalized_gram(const AtomSet& atoms) {
  const AtomSet unit = normalize_atoms(atoms, metric_from_atoms(atoms));
  return unit.data().transpose() * unit.data();
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  if (h < 1) fail("ambient dimension H must be positive");
  if (n < h) fail("atom count n must be at least H");
  if (k_distribution.empty()) {
    if (k < 1 || k > n) fail("sparsity K must satisfy 1 <= K <= n");
  } else {
    double total = 0.0;
    for (const auto& [kk, w] : k_distribution) {
      if (kk < 1 || kk > n) fail("sparsity levels must satisfy 1 <= K <= n");
      if (!(w >= 0.0)) fail("sparsity weights must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) fail("sparsity weights must not all be zero");
  }
  if (!(delta_min > 0.0) || !(delta_max >= delta_min) || !std::isfinite(delta_max)) {
    fail("amplitudes must satisfy 0 < delta_min <= delta_max");
  }
  if (samples < 0) fail("sample count must be nonnegative");
  if (epsilon_target && !(*epsilon_target >= 0.0)) fail("epsilon target must be nonnegative");
  if (orthonormal && n != h) fail("orthonormal atoms require n == H");
}

double welch_bound(Index h, Index n) {
  if (n <= h) return 0.0;
  const double hd = static_cast<double>(h), nd = static_cast<double>(n);
  return std::sqrt((nd - hd) / (hd * (nd - 1.0)));
}

double measured_coherence(const AtomSet& atoms) {
  return coherence(normalize_atoms(atoms, metric_from_atoms(atoms))).mu;
}

AtomSet gen_atoms(const SynthSpec& spec, const GenerationOptions& options) {
  spec.validate();
  Engine rng = make_engine(spec.seed, kAtomStream);
  Matrix d(spec.h, spec.n);

  if (spec.orthonormal) {
    for (Index j = 0; j < spec.n; ++j) fill_unit_gaussian(d.col(j), rng);
    Eigen::HouseholderQR<Matrix> qr(d);
    Matrix q = qr.householderQ() * Matrix::Identity(spec.h, spec.n);
    AtomSet atoms(std::move(q));
    return atoms.with_epsilon(measured_coherence(atoms));
  }

  auto draw_full_rank = [&]() {
    for (int attempt = 0; attempt < options.max_rank_retries; ++attempt) {
      for (Index j = 0; j < spec.n; ++j) fill_unit_gaussian(d.col(j), rng);
      AtomSet candidate(d);
      if (candidate.full_row_rank()) return candidate;
    }
    throw Error(ErrorCode::RankDeficient, "could not draw a full-row-rank dictionary");
  };
  AtomSet atoms = draw_full_rank();
  if (!spec.epsilon_target) return atoms.with_epsilon(measured_coherence(atoms));

  // The normalized inner products depend on every column through S~, so
  // columns are replaced one at a time and a replacement is kept only when it
  // lowers the total violation.
  const double target = *spec.epsilon_target;
  std::vector<Index> offenders;
  double current = excess(normalized_gram(atoms), target, &offenders);
  int stalled = 0;
  for (int round = 0; round < options.max_rounds && current > 0.0; ++round) {
    if (stalled >= options.restart_after) {
      atoms = draw_full_rank();
      current = excess(normalized_gram(atoms), target, &offenders);
      stalled = 0;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, offenders.size() - 1);
    const Index j = offenders[pick(rng)];
    std::optional<AtomSet> best;
    std::vector<Index> best_offenders;
    double best_value = current;
    for (int draw = 0; draw < options.draws_per_round; ++draw) {
      Matrix next = atoms.data();
      fill_unit_gaussian(next.col(j), rng);
      AtomSet candidate(std::move(next));
      if (!candidate.full_row_rank()) continue;
      std::vector<Index> cand_offenders;
      const double value = excess(normalized_gram(candidate), target, &cand_offenders);
      if (value < best_value) {
        best = std::move(candidate);
        best_value = value;
        best_offenders = std::move(cand_offenders);
      }
    }
    if (best) {
      atoms = std::move(*best);
      current = best_value;
      offenders = std::move(best_offenders);
      stalled = 0;
    } else {
      ++stalled;
    }
  }
  if (current == 0.0) return atoms.with_epsilon(measured_coherence(atoms));
  throw Error(ErrorCode::TargetUnreachable,
              "coherence target " + std::to_string(target) + " not reached in " +
                  std::to_string(options.max_rounds) + " rounds; Welch bound for (H=" +
                  std::to_string(spec.h) + ", n=" + std::to_string(spec.n) + ") is " +
                  std::to_string(welch_bound(spec.h, spec.n)));
}

std::vector<SparseCode> gen_codes(const SynthSpec& spec) {
  spec.validate();
  std::vector<double> weights;
  for (const auto& kw : spec.k_distribution) weights.push_back(kw.second);

  std::vector<SparseCode> codes;
  codes.reserve(static_cast<std::size_t>(spec.samples));
  std::vector<Index> perm(static_cast<std::size_t>(spec.n));
  for (Index s = 0; s < spec.samples; ++s) {
    Engine rng = make_engine(spec.seed, kCodeStream, static_cast<std::uint64_t>(s));
    Index k = spec.k;
    if (!weights.empty()) {
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      k = spec.k_distribution[pick(rng)].first;
    }
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<Index> u(i, spec.n - 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(u(rng))]);
    }
    std::sort(perm.begin(), perm.begin() + k);
    std::uniform_real_distribution<double> amp(spec.delta_min, spec.delta_max);
    Vector values = Vector::Zero(spec.n);
    for (Index i = 0; i < k; ++i) {
      double v = amp(rng);
      // uniform_real_distribution is half-open; keep the closed bounds exact.
      v = std::clamp(v, spec.delta_min, spec.delta_max);
      values(perm[static_cast<std::size_t>(i)]) = v;
    }
    codes.emplace_back(std::move(values));
  }
  return codes;
}

ActivationSet gen_dataset(const AtomSet& atoms, const std::vector<SparseCode>& codes) {
  ActivationSet set;
  if (codes.empty()) {
    set.data = Matrix(atoms.ambient_dim(), 0);
  } else {
    const Matrix c = codes_matrix(codes);
    if (c.rows() != atoms.count()) {
      throw Error(ErrorCode::DimensionMismatch, "code length does not match atom count");
    }
    set.data = atoms.data() * c;
  }
  set.metadata = {{"source", "synthetic"}};
  return set;
}

bool feasibility(double epsilon, const SynthSpec& spec) {
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be nonnegative");
  return spec.delta_min > epsilon * (2.0 * static_cast<double>(spec.k) - 1.0) * spec.delta_max;
}

}  // namespace atoms
