#include "atoms/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <tuple>

#include "atoms/random.hpp"

namespace atoms {

namespace {

constexpr std::uint64_t kInitStream = 0x1A;
constexpr std::uint64_t kShuffleStream = 0x5F;

Matrix round_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

SaeModel round_f32(const SaeModel& model) {
  return SaeModel{round_f32(model.w_enc), round_f32(model.w_dec),
                  model.tau.cast<float>().cast<double>()};
}

void require_dims(const SaeModel& model, Index h) {
  if (model.dim() != h) {
    throw Error(ErrorCode::DimensionMismatch, "input dimension " + std::to_string(h) +
                                                  " does not match model dimension " +
                                                  std::to_string(model.dim()));
  }
}

struct Adam {
  Matrix m, v;
  void init(Index rows, Index cols) {
    m = Matrix::Zero(rows, cols);
    v = Matrix::Zero(rows, cols);
  }
  void step(Matrix& param, const Matrix& grad, const TrainConfig& c, double bc1, double bc2) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.adam_eps);
  }
};

void renormalize(SaeModel& model) {
  for (Index j = 0; j < model.width(); ++j) {
    const double c = model.w_dec.col(j).norm();
    if (!(c > 0.0) || !std::isfinite(c)) continue;
    model.w_dec.col(j) /= c;
    model.w_enc.row(j) *= c;
    model.tau(j) *= c;
  }
}

Checkpoint make_checkpoint(int step, const SaeModel& model, const Matrix& xs) {
  Checkpoint cp;
  cp.step = step;
  cp.model = round_f32(model);
  const EvalReport e = evaluate(cp.model, xs);
  cp.recon_loss = e.loss_reconstruct;
  cp.sparsity_loss = e.loss_sparsity;
  cp.r_squared = e.r_squared;
  cp.avg_l0 = e.avg_l0;
  return cp;
}

}  // namespace

void SaeModel::validate() const {
  const Index n = w_enc.rows(), h = w_enc.cols();
  if (w_dec.rows() != h || w_dec.cols() != n || tau.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "encoder, decoder and thresholds disagree in shape");
  }
  if (!w_enc.allFinite() || !w_dec.allFinite() || !tau.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "model parameters must be finite");
  }
  if ((tau.array() <= 0.0).any()) throw Error(ErrorCode::InvalidArgument, "thresholds must be positive");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  if (width < 1) fail("width must be positive");
  if (!(lambda >= 0.0)) fail("lambda must be nonnegative");
  if (!(tau_init > 0.0)) fail("tau_init must be positive");
  if (!(ste_bandwidth > 0.0)) fail("ste_bandwidth must be positive");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (batch_size < 1) fail("batch size must be positive");
  if (epochs < 0) fail("epochs must be nonnegative");
}

DivergedLoss::DivergedLoss(int step, TrainResult partial)
    : Error(ErrorCode::DivergedLoss, "loss became non-finite at step " + std::to_string(step)),
      step_(step),
      partial_(std::move(partial)) {}

Vector jump_relu(const Vector& z, const Vector& tau) {
  if (z.size() != tau.size()) throw Error(ErrorCode::DimensionMismatch, "z and tau differ in length");
  return (z.array() >= tau.array()).select(z, 0.0);
}

Matrix jump_relu(const Matrix& z, const Vector& tau) {
  if (z.rows() != tau.size()) throw Error(ErrorCode::DimensionMismatch, "z and tau differ in length");
  Matrix out = z;
  for (Index c = 0; c < z.cols(); ++c) {
    out.col(c) = (z.col(c).array() >= tau.array()).select(z.col(c), 0.0);
  }
  return out;
}

std::optional<std::pair<double, double>> threshold_window(double epsilon, double k,
                                                          double delta_min, double delta_max) {
  if (!(epsilon >= 0.0) || !(delta_min >= 0.0) || !(delta_max >= 0.0) || !(k >= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold_window needs epsilon, deltas >= 0 and K >= 1");
  }
  const double lo = epsilon * k * delta_max;
  const double hi = delta_min - epsilon * (k - 1.0) * delta_max;
  if (!(lo < hi)) return std::nullopt;
  return std::make_pair(lo, hi);
}

SaeModel analytic_sae(const AtomSet& atoms, const MetricMatrix& metric, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
  if (metric.dim() != atoms.ambient_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "metric and atoms disagree in dimension");
  }
  SaeModel model;
  model.w_dec = atoms.data();
  model.w_enc = atoms.data().transpose() * metric.s_tilde;
  model.tau = Vector::Constant(atoms.count(), tau);
  return model;
}

Forward forward(const SaeModel& model, const Matrix& xs) {
  require_dims(model, xs.rows());
  Forward f;
  f.code = jump_relu(Matrix(model.w_enc * xs), model.tau);
  f.recon = model.w_dec * f.code;
  return f;
}

std::pair<Vector, Vector> forward(const SaeModel& model, const Vector& x) {
  require_dims(model, x.size());
  Vector code = jump_relu(Vector(model.w_enc * x), model.tau);
  Vector recon = model.w_dec * code;
  return {std::move(code), std::move(recon)};
}

LossTerms loss(const Vector& x, const Vector& recon, const Vector& code, double lambda) {
  if (x.size() != recon.size()) throw Error(ErrorCode::DimensionMismatch, "x and recon differ in length");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  LossTerms t;
  t.recon = (x - recon).squaredNorm();
  t.sparsity = code.lpNorm<1>();
  t.total = t.recon + lambda * t.sparsity;
  return t;
}

SaeGradients loss_gradients(const SaeModel& model, const Matrix& batch, double lambda,
                            double bandwidth) {
  require_dims(model, batch.rows());
  const double b = static_cast<double>(batch.cols());
  if (batch.cols() == 0) throw Error(ErrorCode::EmptySamples, "empty batch");

  const Matrix z = model.w_enc * batch;
  Matrix code(z.rows(), z.cols());
  Matrix dz(z.rows(), z.cols());
  for (Index c = 0; c < z.cols(); ++c) {
    for (Index i = 0; i < z.rows(); ++i) {
      const bool on = z(i, c) >= model.tau(i);
      code(i, c) = on ? z(i, c) : 0.0;
      dz(i, c) = on ? 1.0 : 0.0;
    }
  }
  const Matrix resid = model.w_dec * code - batch;

  SaeGradients g;
  g.loss.recon = resid.squaredNorm() / b;
  g.loss.sparsity = code.cwiseAbs().sum() / b;
  g.loss.total = g.loss.recon + lambda * g.loss.sparsity;

  Matrix d_code = (2.0 / b) * (model.w_dec.transpose() * resid);
  d_code.array() += (lambda / b) * z.array().sign();
  g.w_dec = (2.0 / b) * resid * code.transpose();
  g.w_enc = d_code.cwiseProduct(dz) * batch.transpose();

  g.tau = Vector::Zero(model.width());
  const double half = 0.5 * bandwidth;
  for (Index c = 0; c < z.cols(); ++c) {
    for (Index i = 0; i < z.rows(); ++i) {
      if (std::abs(z(i, c) - model.tau(i)) <= half) {
        g.tau(i) -= d_code(i, c) * model.tau(i) / bandwidth;
      }
    }
  }
  return g;
}

SaeModel init_model(Index dim, const TrainConfig& config) {
  config.validate();
  if (dim < 1) throw Error(ErrorCode::InvalidArgument, "dimension must be positive");
  Engine rng = make_engine(config.seed, kInitStream);
  const double a = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> u(-a, a);
  SaeModel model;
  model.w_enc.resize(config.width, dim);
  model.w_dec.resize(dim, config.width);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < config.width; ++i) model.w_enc(i, j) = u(rng);
  for (Index j = 0; j < config.width; ++j)
    for (Index i = 0; i < dim; ++i) model.w_dec(i, j) = u(rng);
  model.tau = Vector::Constant(config.width, config.tau_init);
  if (config.renormalize_decoder) {
    for (Index j = 0; j < config.width; ++j) {
      const double c = model.w_dec.col(j).norm();
      if (c > 0.0) model.w_dec.col(j) /= c;
    }
  }
  return model;
}

TrainResult train(const ActivationSet& data, const TrainConfig& config, const SaeModel* init) {
  config.validate();
  const Matrix& xs = data.data;
  if (xs.cols() == 0) throw Error(ErrorCode::EmptySamples, "training set is empty");
  if (!xs.allFinite()) throw Error(ErrorCode::InvalidArgument, "training data must be finite");

  SaeModel model = init ? *init : init_model(xs.rows(), config);
  model.validate();
  require_dims(model, xs.rows());

  TrainResult result;
  result.checkpoints.push_back(make_checkpoint(0, model, xs));

  Adam enc, dec, thr;
  enc.init(model.w_enc.rows(), model.w_enc.cols());
  dec.init(model.w_dec.rows(), model.w_dec.cols());
  thr.init(model.tau.size(), 1);

  const Index n_samples = xs.cols();
  std::vector<Index> order(static_cast<std::size_t>(n_samples));
  Matrix batch;
  int step = 0;
  double bc1 = 1.0, bc2 = 1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Engine rng = make_engine(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n_samples; start += config.batch_size) {
      const Index len = std::min(config.batch_size, n_samples - start);
      batch.resize(xs.rows(), len);
      for (Index c = 0; c < len; ++c) batch.col(c) = xs.col(order[static_cast<std::size_t>(start + c)]);

      const SaeGradients g = loss_gradients(model, batch, config.lambda, config.ste_bandwidth);
      if (!std::isfinite(g.loss.total) || !g.w_enc.allFinite() || !g.w_dec.allFinite()) {
        result.model = result.checkpoints.back().model;
        throw DivergedLoss(step, std::move(result));
      }
      ++step;
      bc1 *= config.beta1;
      bc2 *= config.beta2;
      enc.step(model.w_enc, g.w_enc, config, 1.0 - bc1, 1.0 - bc2);
      dec.step(model.w_dec, g.w_dec, config, 1.0 - bc1, 1.0 - bc2);
      Matrix tau = model.tau;
      thr.step(tau, g.tau, config, 1.0 - bc1, 1.0 - bc2);
      // Thresholds stay strictly positive.
      model.tau = tau.col(0).cwiseMax(1e-12);
      if (config.renormalize_decoder) renormalize(model);

      if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
        result.checkpoints.push_back(make_checkpoint(step, model, xs));
        if (!std::isfinite(result.checkpoints.back().recon_loss)) {
          result.checkpoints.pop_back();
          result.model = result.checkpoints.back().model;
          throw DivergedLoss(step, std::move(result));
        }
      }
    }
  }
  if (result.checkpoints.back().step != step) {
    result.checkpoints.push_back(make_checkpoint(step, model, xs));
  }
  result.model = result.checkpoints.back().model;
  return result;
}

const Checkpoint& select_pareto(const std::vector<Checkpoint>& checkpoints, double lambda) {
  if (checkpoints.empty()) throw Error(ErrorCode::EmptyCheckpoints, "no checkpoints to select from");
  auto dominated = [&](const Checkpoint& a) {
    for (const Checkpoint& b : checkpoints) {
      if (b.recon_loss <= a.recon_loss && b.sparsity_loss <= a.sparsity_loss &&
          (b.recon_loss < a.recon_loss || b.sparsity_loss < a.sparsity_loss)) {
        return true;
      }
    }
    return false;
  };
  const Checkpoint* best = nullptr;
  double best_total = 0.0;
  for (const Checkpoint& c : checkpoints) {
    if (dominated(c)) continue;
    const double total = c.recon_loss + lambda * c.sparsity_loss;
    if (!best || total < best_total) {
      best = &c;
      best_total = total;
    }
  }
  return *best;
}

double r_squared(const Matrix& originals, const Matrix& recons) {
  if (originals.rows() != recons.rows() || originals.cols() != recons.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "originals and reconstructions differ in shape");
  }
  if (originals.cols() < 2) throw Error(ErrorCode::ZeroVariance, "need at least two samples");
  const Vector mean = originals.rowwise().mean();
  const double total = (originals.colwise() - mean).squaredNorm();
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroVariance, "originals have zero variance");
  return 1.0 - (originals - recons).squaredNorm() / total;
}

double r_squared(const ActivationSet& originals, const ActivationSet& recons) {
  return r_squared(originals.data, recons.data);
}

double avg_l0(const Matrix& codes) {
  if (codes.cols() == 0) throw Error(ErrorCode::EmptySamples, "no codes");
  return static_cast<double>((codes.array() != 0.0).count()) / static_cast<double>(codes.cols());
}

EvalReport evaluate(const SaeModel& model, const Matrix& xs) {
  const Forward f = forward(model, xs);
  const double n = static_cast<double>(xs.cols());
  EvalReport e;
  e.loss_reconstruct = (xs - f.recon).squaredNorm() / n;
  e.loss_sparsity = f.code.cwiseAbs().sum() / n;
  e.avg_l0 = avg_l0(f.code);
  e.r_squared = r_squared(xs, f.recon);
  return e;
}

AlignmentReport alignment(const SaeModel& model) {
  model.validate();
  const Matrix gram = model.w_dec * model.w_dec.transpose();
  Eigen::ColPivHouseholderQR<Matrix> qr(model.w_dec.transpose());
  if (qr.rank() < model.dim()) throw Error(ErrorCode::RankDeficient, "decoder is not full row rank");
  const Matrix target = model.w_dec.transpose() * gram.inverse();
  AlignmentReport r;
  r.per_atom_cosine.resize(model.width());
  for (Index i = 0; i < model.width(); ++i) {
    const double denom = model.w_enc.row(i).norm() * target.row(i).norm();
    const double c = denom > 0.0 ? model.w_enc.row(i).dot(target.row(i)) / denom : 0.0;
    r.per_atom_cosine(i) = std::clamp(c, -1.0, 1.0);
  }
  r.mean_alignment = r.per_atom_cosine.mean();
  return r;
}

AtomMatch match_atoms(const AtomSet& truth, const Matrix& decoder, double threshold) {
  if (decoder.rows() != truth.ambient_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "decoder and atoms disagree in dimension");
  }
  const MetricMatrix metric = metric_from_atoms(truth);
  const Matrix& d = truth.data();
  const Matrix sd = metric.s_tilde * decoder;
  const Matrix cross = d.transpose() * sd;
  const Vector nt = (d.transpose() * metric.s_tilde * d).diagonal().cwiseSqrt();
  const Vector nd = (decoder.transpose() * sd).diagonal().cwiseSqrt();

  std::vector<std::tuple<double, Index, Index>> cand;
  cand.reserve(static_cast<std::size_t>(cross.size()));
  for (Index j = 0; j < cross.cols(); ++j) {
    if (!(nd(j) > 0.0)) continue;
    for (Index i = 0; i < cross.rows(); ++i) cand.emplace_back(cross(i, j) / (nt(i) * nd(j)), i, j);
  }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
  });

  AtomMatch out;
  out.similarity = Vector::Constant(truth.count(), -1.0);
  std::vector<bool> used_t(static_cast<std::size_t>(truth.count()), false);
  std::vector<bool> used_d(static_cast<std::size_t>(decoder.cols()), false);
  for (const auto& [s, i, j] : cand) {
    if (used_t[static_cast<std::size_t>(i)] || used_d[static_cast<std::size_t>(j)]) continue;
    used_t[static_cast<std::size_t>(i)] = used_d[static_cast<std::size_t>(j)] = true;
    out.pairs.emplace_back(i, j);
    out.similarity(i) = std::clamp(s, -1.0, 1.0);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.matched_fraction =
      static_cast<double>((out.similarity.array() >= threshold).count()) / static_cast<double>(truth.count());
  return out;
}

void write_training_curve(std::ostream& out, const std::vector<Checkpoint>& checkpoints) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out.precision(10);
  out << "step,recon_loss,sparsity_loss,r2,avg_l0\n";
  for (const Checkpoint& c : checkpoints) {
    out << c.step << ',' << c.recon_loss << ',' << c.sparsity_loss << ',' << c.r_squared << ','
        << c.avg_l0 << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace atoms
