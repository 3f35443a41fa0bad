#include <random>
#include <sstream>

#include "atoms/random.hpp"
#include "atoms/sae.hpp"
#include "atoms/synth.hpp"
#include "support.hpp"

using namespace atoms;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Checkpoint point(int step, double recon, double sparsity) {
  Checkpoint c;
  c.step = step;
  c.recon_loss = recon;
  c.sparsity_loss = sparsity;
  return c;
}

ActivationSet planted(Index h, Index n, Index k, Index samples, std::uint64_t seed) {
  SynthSpec spec;
  spec.h = h;
  spec.n = n;
  spec.k = k;
  spec.samples = samples;
  spec.seed = seed;
  return gen_dataset(gen_atoms(spec), gen_codes(spec));
}

}  // namespace

TEST_CASE("jump relu") {
  CHECK(jump_relu(v2(0.5, 2.0), v2(1, 1)) == v2(0.0, 2.0));
  CHECK(jump_relu(v2(1.0, 0.3), v2(1.0, 0.31)) == v2(1.0, 0.0));  // inclusive at tau
  CHECK(jump_relu(v2(-1.0, 0.0), v2(0.1, 0.1)).isZero());

  Engine rng(1);
  std::normal_distribution<double> g;
  for (int t = 0; t < 100; ++t) {
    Vector z(6), tau(6);
    for (Index i = 0; i < 6; ++i) {
      z(i) = g(rng);
      tau(i) = std::abs(g(rng)) + 1e-3;
    }
    const Vector once = jump_relu(z, tau);
    CHECK(jump_relu(once, tau) == once);
  }
  CHECK(test::error_of([] { jump_relu(Vector(Vector::Zero(2)), Vector(Vector::Ones(3))); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("threshold window") {
  const auto exact = threshold_window(0.0, 5, 1.0, 2.0);
  REQUIRE(exact.has_value());
  CHECK(exact->first == 0.0);
  CHECK(exact->second == 1.0);

  const auto small = threshold_window(0.01, 5, 0.5, 1.0);
  REQUIRE(small.has_value());
  CHECK(small->first == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(small->second == doctest::Approx(0.46).epsilon(1e-12));

  CHECK_FALSE(threshold_window(0.2, 3, 1.0, 1.0).has_value());
  // Nonempty exactly when delta_min > eps (2K - 1) delta_max.
  for (double eps : {0.0, 0.01, 0.05, 0.1, 0.3})
    for (int k : {1, 2, 5})
      CHECK(threshold_window(eps, k, 0.5, 1.0).has_value() == (0.5 > eps * (2 * k - 1) * 1.0));
  CHECK(test::error_of([] { threshold_window(0.1, 0, 0.5, 1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("analytic sae on the identity") {
  const AtomSet id(Matrix::Identity(3, 3));
  const SaeModel m = analytic_sae(id, metric_from_atoms(id), 0.5);
  Vector e1 = Vector::Zero(3);
  e1(0) = 1.0;
  const auto [code, recon] = forward(m, e1);
  CHECK(code == e1);
  CHECK(recon == e1);
  const auto [zc, zr] = forward(m, Vector(Vector::Zero(3)));
  CHECK(zc.isZero());
  CHECK(zr.isZero());
  CHECK(test::error_of([&] { forward(m, Vector(Vector::Zero(4))); }) == ErrorCode::DimensionMismatch);
  CHECK(test::error_of([&] { analytic_sae(id, metric_from_atoms(AtomSet(Matrix::Identity(2, 2))), 0.5); }) ==
        ErrorCode::DimensionMismatch);
}

TEST_CASE("analytic sae separates supports on a near-orthogonal instance") {
  SynthSpec spec;
  spec.h = 32;
  spec.n = 33;
  spec.k = 2;
  spec.samples = 200;
  spec.seed = 2;
  const AtomSet atoms = gen_atoms(spec);
  const MetricMatrix metric = metric_from_atoms(atoms);
  const auto window = threshold_window(*atoms.epsilon(), 2, 0.5, 1.0);
  REQUIRE(window.has_value());
  const SaeModel m = analytic_sae(atoms, metric, 0.5 * (window->first + window->second));
  CHECK(alignment(m).per_atom_cosine.minCoeff() > 1.0 - 1e-8);
  const std::vector<SparseCode> codes = gen_codes(spec);
  const ActivationSet data = gen_dataset(atoms, codes);
  const Forward f = forward(m, data.data);
  for (std::size_t s = 0; s < codes.size(); ++s) {
    for (Index i = 0; i < spec.n; ++i) {
      CHECK((f.code(i, static_cast<Index>(s)) != 0.0) == (codes[s].values()(i) != 0.0));
    }
  }
  CHECK(avg_l0(f.code) == 2.0);
}

TEST_CASE("loss") {
  const LossTerms t = loss(v2(1, 1), v2(0, 0), v2(2, 0), 0.1);
  CHECK(t.recon == 2.0);
  CHECK(t.sparsity == 2.0);
  CHECK(t.total == doctest::Approx(2.2));
  CHECK(loss(v2(1, 1), v2(1, 1), v2(0, 0), 0.5).total == 0.0);
  CHECK(loss(v2(1, 1), v2(0, 0), v2(2, 0), 0.0).total == 2.0);
  CHECK(test::error_of([] { loss(v2(1, 1), v2(0, 0), v2(2, 0), -1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("analytic gradients match finite differences away from thresholds") {
  Engine rng(11);
  std::normal_distribution<double> g;
  const Index h = 5, n = 7, b = 4;
  const double lambda = 0.3, bw = 1e-3;
  int checked = 0;
  while (checked < 20) {
    SaeModel m;
    m.w_enc.resize(n, h);
    m.w_dec.resize(h, n);
    m.tau = Vector::Constant(n, 0.1);
    for (Index i = 0; i < n * h; ++i) m.w_enc.data()[i] = g(rng) * 0.5;
    for (Index i = 0; i < n * h; ++i) m.w_dec.data()[i] = g(rng) * 0.5;
    Matrix x(h, b);
    for (Index i = 0; i < h * b; ++i) x.data()[i] = g(rng);
    const Matrix z = m.w_enc * x;
    if (((z.array() - 0.1).abs() < 0.05).any()) continue;
    ++checked;

    auto objective = [&](const SaeModel& p) { return loss_gradients(p, x, lambda, bw).loss.total; };
    const SaeGradients an = loss_gradients(m, x, lambda, bw);
    const double step = 1e-6;
    Matrix fd_enc(n, h), fd_dec(h, n);
    for (Index i = 0; i < n * h; ++i) {
      SaeModel p = m, q = m;
      p.w_enc.data()[i] += step;
      q.w_enc.data()[i] -= step;
      fd_enc.data()[i] = (objective(p) - objective(q)) / (2 * step);
      p = m;
      q = m;
      p.w_dec.data()[i] += step;
      q.w_dec.data()[i] -= step;
      fd_dec.data()[i] = (objective(p) - objective(q)) / (2 * step);
    }
    CHECK((an.w_enc - fd_enc).cwiseAbs().maxCoeff() <= 1e-4 * std::max(1.0, fd_enc.cwiseAbs().maxCoeff()));
    CHECK((an.w_dec - fd_dec).cwiseAbs().maxCoeff() <= 1e-4 * std::max(1.0, fd_dec.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("threshold pseudo-gradient uses the rectangular kernel") {
  SaeModel m;
  m.w_enc = Matrix::Identity(1, 1);
  m.w_dec = Matrix::Identity(1, 1);
  m.tau = Vector::Constant(1, 0.5);
  Matrix x(1, 1);
  x(0, 0) = 0.5002;  // inside the window of half-width 0.0005
  const SaeGradients in = loss_gradients(m, x, 0.1, 1e-3);
  // resid = 0, so d_code = lambda; pseudo-gradient = -lambda tau / bw.
  CHECK(in.tau(0) == doctest::Approx(-0.1 * 0.5 / 1e-3));
  x(0, 0) = 0.6;
  CHECK(loss_gradients(m, x, 0.1, 1e-3).tau(0) == 0.0);
}

TEST_CASE("training is deterministic and epochs = 0 keeps the initial model") {
  const ActivationSet data = planted(8, 12, 2, 300, 3);
  TrainConfig c;
  c.width = 12;
  c.epochs = 0;
  c.batch_size = 64;
  const SaeModel init = init_model(8, c);
  const TrainResult none = train(data, c);
  REQUIRE(none.checkpoints.size() == 1);
  CHECK(none.checkpoints[0].step == 0);
  CHECK((none.model.w_enc - init.w_enc).cwiseAbs().maxCoeff() < 1e-7);
  CHECK((none.model.w_dec - init.w_dec).cwiseAbs().maxCoeff() < 1e-7);

  c.epochs = 3;
  c.checkpoint_every = 2;
  const TrainResult a = train(data, c);
  const TrainResult b = train(data, c);
  CHECK(a.model.w_enc == b.model.w_enc);
  CHECK(a.model.w_dec == b.model.w_dec);
  CHECK(a.model.tau == b.model.tau);
  // 300 samples at 64 per batch: 5 steps per epoch, 15 in total.
  CHECK(a.checkpoints.back().step == 15);
  CHECK(a.checkpoints.size() == 9);  // 0, 2, ..., 14, 15
  CHECK((a.model.tau.array() > 0.0).all());
  for (Index j = 0; j < a.model.width(); ++j) CHECK(std::abs(a.model.w_dec.col(j).norm() - 1.0) < 1e-6);
  CHECK(a.model.w_enc == a.model.w_enc.cast<float>().cast<double>());

  c.seed = 1;
  CHECK(train(data, c).model.w_enc != a.model.w_enc);

  std::ostringstream curve;
  write_training_curve(curve, a.checkpoints);
  CHECK(curve.str().rfind("step,recon_loss,sparsity_loss,r2,avg_l0\n0,", 0) == 0);

  TrainConfig bad = c;
  bad.batch_size = 0;
  CHECK(test::error_of([&] { train(data, bad); }) == ErrorCode::InvalidSpec);
  CHECK(test::error_of([&] { train(ActivationSet{Matrix(8, 0)}, c); }) == ErrorCode::EmptySamples);
}

TEST_CASE("training reduces the reconstruction loss") {
  const ActivationSet data = planted(8, 12, 2, 512, 4);
  TrainConfig c;
  c.width = 12;
  c.epochs = 20;
  c.batch_size = 64;
  c.lambda = 0.01;
  const TrainResult r = train(data, c);
  CHECK(r.checkpoints.back().recon_loss < 0.5 * r.checkpoints.front().recon_loss);
}

TEST_CASE("divergence is reported with the last finite checkpoint") {
  const ActivationSet data = planted(4, 6, 1, 64, 5);
  TrainConfig c;
  c.width = 6;
  c.epochs = 1;
  c.batch_size = 16;
  SaeModel init = init_model(4, c);
  init.w_dec(0, 0) = 1e300;
  try {
    train(data, c, &init);
    FAIL("expected divergence");
  } catch (const DivergedLoss& e) {
    CHECK(e.code() == ErrorCode::DivergedLoss);
    CHECK(e.step() >= 0);
  } catch (const Error& e) {
    // Overflow can already show up in the step-0 evaluation.
    CHECK(e.code() == ErrorCode::DivergedLoss);
  }
}

TEST_CASE("pareto selection") {
  const std::vector<Checkpoint> one{point(0, 1, 1)};
  CHECK(&select_pareto(one, 0.1) == &one[0]);
  const std::vector<Checkpoint> three{point(0, 1, 1), point(1, 2, 0.5), point(2, 0.5, 2), point(3, 2, 2)};
  CHECK(select_pareto(three, 0.1).step == 2);
  // With a heavy sparsity weight the knee moves but never onto (2,2).
  CHECK(select_pareto(three, 10.0).step == 1);
  CHECK(test::error_of([] { select_pareto({}, 0.1); }) == ErrorCode::EmptyCheckpoints);

  Engine rng(6);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 50; ++t) {
    std::vector<Checkpoint> cs;
    for (int i = 0; i < 12; ++i) cs.push_back(point(i, u(rng), u(rng)));
    const Checkpoint& s = select_pareto(cs, u(rng));
    for (const Checkpoint& o : cs) {
      CHECK_FALSE((o.recon_loss <= s.recon_loss && o.sparsity_loss <= s.sparsity_loss &&
                   (o.recon_loss < s.recon_loss || o.sparsity_loss < s.sparsity_loss)));
    }
  }
}

TEST_CASE("r squared") {
  Matrix x(2, 2), xhat(2, 2);
  x << 0, 2, 0, 0;
  xhat << 1, 1, 0, 0;
  CHECK(r_squared(x, x) == 1.0);
  CHECK(r_squared(x, xhat) == 0.0);
  CHECK(r_squared(x, -xhat) < 0.0);
  CHECK(test::error_of([&] { r_squared(Matrix::Ones(2, 2), Matrix::Ones(2, 2)); }) == ErrorCode::ZeroVariance);
  CHECK(test::error_of([&] { r_squared(x.leftCols(1), xhat.leftCols(1)); }) == ErrorCode::ZeroVariance);

  Engine rng(7);
  std::normal_distribution<double> g;
  Matrix a(5, 30), b(5, 30), r(5, 5);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = a.data()[i] + 0.3 * g(rng);
  for (Index i = 0; i < r.size(); ++i) r.data()[i] = g(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(r).householderQ();
  CHECK(r_squared(q * a, q * b) == doctest::Approx(r_squared(a, b)).epsilon(1e-12));
  CHECK(r_squared(ActivationSet{a}, ActivationSet{b}) == r_squared(a, b));
}

TEST_CASE("average l0") {
  CHECK(avg_l0(Matrix::Zero(3, 4)) == 0.0);
  Matrix c(2, 2);
  c << 1, 1, 0, 1;
  CHECK(avg_l0(c) == 1.5);
}

TEST_CASE("alignment") {
  SynthSpec spec;
  spec.h = 16;
  spec.n = 24;
  const AtomSet atoms = gen_atoms(spec);
  const SaeModel analytic = analytic_sae(atoms, metric_from_atoms(atoms), 0.1);
  const AlignmentReport a = alignment(analytic);
  CHECK((a.per_atom_cosine.array() - 1.0).abs().maxCoeff() < 1e-8);

  TrainConfig c;
  c.width = 256;
  const AlignmentReport random = alignment(init_model(64, c));
  CHECK(std::abs(random.mean_alignment) < 0.1);

  SaeModel flat = analytic;
  flat.w_dec.row(1) = flat.w_dec.row(0);
  CHECK(test::error_of([&] { alignment(flat); }) == ErrorCode::RankDeficient);
}

TEST_CASE("atom matching") {
  SynthSpec spec;
  spec.h = 16;
  spec.n = 24;
  const AtomSet atoms = gen_atoms(spec);
  Matrix shuffled(16, 24);
  for (Index j = 0; j < 24; ++j) shuffled.col(j) = 2.0 * atoms.data().col((j * 5) % 24);
  const AtomMatch m = match_atoms(atoms, shuffled);
  CHECK(m.matched_fraction == 1.0);
  for (const auto& [truth, col] : m.pairs) CHECK((col * 5) % 24 == truth);
  CHECK((m.similarity.array() - 1.0).abs().maxCoeff() < 1e-10);

  Matrix half = shuffled;
  half.rightCols(12) = -half.rightCols(12);
  CHECK(match_atoms(atoms, half).matched_fraction == doctest::Approx(0.5));
  CHECK(test::error_of([&] { match_atoms(atoms, Matrix::Identity(3, 3)); }) == ErrorCode::DimensionMismatch);
}
