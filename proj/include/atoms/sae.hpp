#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "atoms/error.hpp"
#include "atoms/geometry.hpp"
#include "atoms/synth.hpp"

namespace atoms {

/// Single-layer threshold autoencoder: x -> w_dec * jump_relu(w_enc * x, tau).
struct SaeModel {
  Matrix w_enc;  // n x H
  Matrix w_dec;  // H x n
  Vector tau;    // n, strictly positive

  Index width() const noexcept { return w_enc.rows(); }
  Index dim() const noexcept { return w_enc.cols(); }

  /// Throws DimensionMismatch or InvalidArgument.
  void validate() const;
};

struct TrainConfig {
  Index width = 256;
  double lambda = 0.1;
  double tau_init = 0.001;
  double ste_bandwidth = 0.001;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 256;
  int epochs = 10;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;  // steps; <= 0 records only the endpoints
  bool renormalize_decoder = true;

  void validate() const;
};

struct EvalReport {
  double r_squared = 0.0;
  double avg_l0 = 0.0;
  double loss_reconstruct = 0.0;  // mean squared error per sample
  double loss_sparsity = 0.0;     // mean l1 of the code per sample
};

struct Checkpoint {
  int step = 0;
  double recon_loss = 0.0;
  double sparsity_loss = 0.0;
  double r_squared = 0.0;
  double avg_l0 = 0.0;
  SaeModel model;
};

struct TrainResult {
  SaeModel model;
  std::vector<Checkpoint> checkpoints;
};

/// Raised when the loss stops being finite; carries everything recorded
/// before that point.
class DivergedLoss : public Error {
 public:
  DivergedLoss(int step, TrainResult partial);
  const TrainResult& partial() const noexcept { return partial_; }
  int step() const noexcept { return step_; }

 private:
  int step_;
  TrainResult partial_;
};

struct AlignmentReport {
  Vector per_atom_cosine;
  double mean_alignment = 0.0;
};

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double sparsity = 0.0;
};

struct SaeGradients {
  Matrix w_enc;
  Matrix w_dec;
  Vector tau;
  LossTerms loss;  // batch means
};

struct Forward {
  Matrix code;   // n x B
  Matrix recon;  // H x B
};

/// Elementwise z * 1{z >= tau}.
Vector jump_relu(const Vector& z, const Vector& tau);
Matrix jump_relu(const Matrix& z, const Vector& tau);

/// Open interval of thresholds for which the analytic encoder separates
/// supports; empty when delta_min <= epsilon (2K - 1) delta_max.
std::optional<std::pair<double, double>> threshold_window(double epsilon, double k,
                                                          double delta_min, double delta_max);

/// w_dec = D, w_enc = D^T S, uniform tau.
SaeModel analytic_sae(const AtomSet& atoms, const MetricMatrix& metric, double tau);

Forward forward(const SaeModel& model, const Matrix& xs);
std::pair<Vector, Vector> forward(const SaeModel& model, const Vector& x);

/// |x - recon|^2 + lambda |code|_1 for one sample.
LossTerms loss(const Vector& x, const Vector& recon, const Vector& code, double lambda);

/// Batch-mean loss and its gradient. The threshold gradient uses a
/// rectangular straight-through kernel of width `bandwidth`.
SaeGradients loss_gradients(const SaeModel& model, const Matrix& batch, double lambda,
                            double bandwidth);

/// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, thresholds tau_init.
SaeModel init_model(Index dim, const TrainConfig& config);

/// Adam on mini-batches with per-epoch seeded shuffling. With
/// `init` the run starts from that model instead of init_model. Returned
/// parameters are rounded to float32 so they survive save_model unchanged.
TrainResult train(const ActivationSet& data, const TrainConfig& config,
                  const SaeModel* init = nullptr);

/// Knee of the (recon, sparsity) Pareto front: the non-dominated checkpoint
/// minimizing recon + lambda * sparsity. Ties go to the earliest.
const Checkpoint& select_pareto(const std::vector<Checkpoint>& checkpoints, double lambda);

/// 1 - sum |x_i - xhat_i|^2 / sum |x_i - mean|^2 over columns.
double r_squared(const Matrix& originals, const Matrix& recons);
double r_squared(const ActivationSet& originals, const ActivationSet& recons);

/// Mean number of nonzero entries per column.
double avg_l0(const Matrix& codes);

EvalReport evaluate(const SaeModel& model, const Matrix& xs);

/// Cosine between row i of w_enc and row i of w_dec^T (w_dec w_dec^T)^{-1}.
AlignmentReport alignment(const SaeModel& model);

struct AtomMatch {
  std::vector<std::pair<Index, Index>> pairs;  // (true atom, decoder column)
  Vector similarity;                           // per true atom, NAIP with its partner
  double matched_fraction = 0.0;               // share with similarity >= threshold
};

/// Greedy one-to-one assignment of true atoms to decoder columns by NAIP
/// under the metric of the true atoms, highest similarity first.
AtomMatch match_atoms(const AtomSet& truth, const Matrix& decoder, double threshold = 0.9);

/// step,recon_loss,sparsity_loss,r2,avg_l0
void write_training_curve(std::ostream& out, const std::vector<Checkpoint>& checkpoints);

}  // namespace atoms
