#include <random>
#include <sstream>

#include "atoms/certificates.hpp"
#include "atoms/random.hpp"
#include "atoms/recovery.hpp"
#include "atoms/synth.hpp"
#include "support.hpp"

using namespace atoms;

TEST_CASE("basis pursuit on the identity") {
  Vector m = Vector::Zero(4);
  m(0) = 1.0;
  const RecoveryResult r = basis_pursuit(AtomSet(Matrix::Identity(4, 4)), m);
  CHECK(r.converged);
  CHECK((r.solution - m).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.objective == doctest::Approx(1.0));
  CHECK(r.residual == doctest::Approx((r.solution - m).norm()));

  const RecoveryResult zero = basis_pursuit(AtomSet(Matrix::Identity(3, 3)), Vector::Zero(3));
  CHECK(zero.solution.isZero());
  CHECK(test::error_of([] { basis_pursuit(AtomSet(Matrix::Identity(3, 3)), Vector::Zero(2)); }) ==
        ErrorCode::DimensionMismatch);
}

TEST_CASE("basis pursuit matches the LP oracle on an 8x32 instance") {
  const auto& o = test::oracle()["recovery"];
  const AtomSet unit(test::columns(o["normalized"]));
  const Vector delta = test::vec(o["delta"]);
  const Vector m = test::vec(o["measurement"]);
  const RecoveryResult r = basis_pursuit(unit, m);
  CHECK(r.converged);
  CHECK((r.solution - delta).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(r.objective <= o["lp_objective"].get<double>() + 1e-6);
  CHECK(r.residual <= 1e-8 * std::max(1.0, m.norm()));
  CHECK(r.residual == (unit.data() * r.solution - m).norm());
  CHECK(r.objective == r.solution.lpNorm<1>());
}

TEST_CASE("basis pursuit is scale equivariant") {
  const auto& o = test::oracle()["recovery"];
  const AtomSet unit(test::columns(o["normalized"]));
  const Vector m = test::vec(o["measurement"]);
  const Vector base = basis_pursuit(unit, m).solution;
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    const Vector scaled = basis_pursuit(unit, c * m).solution;
    CHECK((scaled - c * base).norm() <= 1e-6 * c * base.norm());
  }
}

TEST_CASE("basis pursuit reports non-convergence honestly") {
  const auto& o = test::oracle()["recovery"];
  const AtomSet unit(test::columns(o["normalized"]));
  const Vector m = test::vec(o["measurement"]);
  BasisPursuitOptions opts;
  opts.max_iterations = 3;
  opts.polish = false;
  const RecoveryResult r = basis_pursuit(unit, m, opts);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 3);
  CHECK(r.residual == (unit.data() * r.solution - m).norm());
}

TEST_CASE("l0 oracle") {
  Vector m = Vector::Zero(3);
  m(1) = 2.0;
  const RecoveryResult r = l0_oracle(AtomSet(Matrix::Identity(3, 3)), m, 2);
  CHECK(r.solution(1) == doctest::Approx(2.0));
  CHECK((r.solution.array() != 0.0).count() == 1);

  const RecoveryResult z = l0_oracle(AtomSet(Matrix::Identity(3, 3)), Vector::Zero(3), 2);
  CHECK(z.solution.isZero());

  CHECK(test::error_of([] { l0_oracle(AtomSet(Matrix::Identity(25, 25)), Vector::Zero(25), 1); }) ==
        ErrorCode::TooLarge);
  CHECK(test::error_of([] { l0_oracle(AtomSet(Matrix::Identity(3, 3)), Vector::Zero(3), 5); }) == ErrorCode::TooLarge);

  Matrix d = Matrix::Zero(3, 3);
  d(0, 0) = d(1, 1) = d(2, 2) = 1.0;
  Vector all(3);
  all << 1, 1, 1;
  CHECK(test::error_of([&] { l0_oracle(AtomSet(d), all, 2); }) == ErrorCode::Infeasible);
}

TEST_CASE("l0 oracle breaks ties by l1 norm and then lexicographically") {
  // Atoms 0 and 1 both equal e1 scaled: e1 = a0 = 2 a1. The smaller l1 wins.
  Matrix d(2, 3);
  d << 1, 2, 0, 0, 0, 1;
  Vector m(2);
  m << 1, 0;
  const RecoveryResult r = l0_oracle(AtomSet(d), m, 1);
  CHECK(r.solution(1) == doctest::Approx(0.5));
  CHECK(r.solution(0) == 0.0);

  Matrix twin(2, 3);
  twin << 1, 1, 0, 0, 0, 1;
  const RecoveryResult t = l0_oracle(AtomSet(twin), m, 1);
  CHECK(t.solution(0) == doctest::Approx(1.0));
  CHECK(t.solution(1) == 0.0);
}

TEST_CASE("l0 oracle recovers planted supports on a 4x8 dictionary") {
  // mu >= Welch bound 0.378 here, no certificate. Any four atoms are
  // independent, so 2-sparse codes are still the unique sparsest explanation.
  SynthSpec spec;
  spec.h = 4;
  spec.n = 8;
  spec.k = 2;
  spec.samples = 20;
  spec.seed = 17;
  const AtomSet atoms = gen_atoms(spec);
  const AtomSet unit = normalize_atoms(atoms, metric_from_atoms(atoms));
  CHECK(coherence(unit).mu >= welch_bound(4, 8));
  for (const SparseCode& code : gen_codes(spec)) {
    const RecoveryResult r = l0_oracle(unit, unit.data() * code.values(), 2);
    CHECK((r.solution - code.values()).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("basis pursuit agrees with the l0 oracle on certified 16x24 instances") {
  SynthSpec spec;
  spec.h = 16;
  spec.n = 24;
  spec.k = 2;
  spec.samples = 30;
  spec.epsilon_target = 0.333;
  spec.seed = 5;
  const AtomSet atoms = gen_atoms(spec);
  const AtomSet unit = normalize_atoms(atoms, metric_from_atoms(atoms));
  REQUIRE(uniqueness_certified(coherence(unit).mu, 2));
  for (const SparseCode& code : gen_codes(spec)) {
    const Vector m = unit.data() * code.values();
    const RecoveryResult l0 = l0_oracle(unit, m, 2);
    const RecoveryResult bp = basis_pursuit(unit, m);
    CHECK(bp.converged);
    CHECK((bp.solution - l0.solution).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((bp.solution - code.values()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("recovery experiment") {
  RecoveryConfig c;
  c.h = 16;
  c.n = 24;
  c.k = 2;
  c.trials = 8;
  c.seed = 4;
  c.epsilon_target = 0.333;
  const RecoveryReport r = recovery_experiment(c);
  CHECK(r.trials.size() == 8);
  REQUIRE(r.success_rate().has_value());
  CHECK(*r.success_rate() == 1.0);
  CHECK(r.oracle_checked == r.certified);
  CHECK(r.oracle_agreed == r.oracle_checked);

  c.jobs = 3;
  const RecoveryReport par = recovery_experiment(c);
  std::ostringstream a, b;
  write_recovery_table(a, r);
  write_recovery_table(b, par);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("trial,mu,bound,certified,recovered,residual\n", 0) == 0);

  c.trials = 0;
  const RecoveryReport empty = recovery_experiment(c);
  CHECK(empty.trials.empty());
  CHECK_FALSE(empty.success_rate().has_value());

  // Unconstrained Gaussian 8x32 atoms are far too coherent to certify K = 4.
  RecoveryConfig vacuous;
  vacuous.h = 8;
  vacuous.n = 32;
  vacuous.k = 4;
  vacuous.trials = 5;
  const RecoveryReport v = recovery_experiment(vacuous);
  CHECK(v.certified == 0);
  CHECK_FALSE(v.success_rate().has_value());
}
