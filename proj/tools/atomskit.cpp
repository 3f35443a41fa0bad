// atomskit: synthetic atom pipelines, certificates, recovery and SAE training.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atoms/certificates.hpp"
#include "atoms/error.hpp"
#include "atoms/geometry.hpp"
#include "atoms/random.hpp"
#include "atoms/recovery.hpp"
#include "atoms/sae.hpp"
#include "atoms/store.hpp"
#include "atoms/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace atoms;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Emits text to a file (atomically) or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_atomic(path, text);
  }
}

AtomSet round_to_f32(const AtomSet& atoms) {
  AtomSet rounded(atoms.data().cast<float>().cast<double>());
  return rounded.with_epsilon(measured_coherence(rounded));
}

std::vector<double> sparsity_levels(const Matrix& codes) {
  std::vector<double> out(static_cast<std::size_t>(codes.cols()));
  for (Index c = 0; c < codes.cols(); ++c) {
    out[static_cast<std::size_t>(c)] = static_cast<double>((codes.col(c).array() != 0.0).count());
  }
  return out;
}

std::vector<double> expand_runs(const json& runs) {
  std::vector<double> out;
  for (const json& r : runs) {
    const double value = r.at(0).get<double>();
    const auto count = r.at(1).get<std::uint64_t>();
    out.insert(out.end(), count, value);
  }
  return out;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  SynthSpec spec;
  double epsilon_target = -1.0;
  std::string out = "synth_out";
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec;
  if (a.epsilon_target >= 0.0) spec.epsilon_target = a.epsilon_target;
  spec.validate();
  // Files hold float32, so every derived quantity is computed from the
  // rounded atoms.
  const AtomSet atoms = round_to_f32(gen_atoms(spec));
  const std::vector<SparseCode> codes = gen_codes(spec);
  ActivationSet data = gen_dataset(atoms, codes);
  data.metadata["kind"] = "activations";
  data.metadata["seed"] = spec.seed;

  fs::create_directories(a.out);
  save_atoms(fs::path(a.out) / "atoms.atd", atoms);
  save_codes(fs::path(a.out) / "codes.atd", codes);
  write_dump(fs::path(a.out) / "data.atd", data);

  const double eps = *atoms.epsilon();
  std::cout << "epsilon " << fixed(eps, 6) << '\n';
  std::cout << "welch_bound " << fixed(welch_bound(spec.h, spec.n), 6) << '\n';
  std::cout << "feasible " << (feasibility(eps, spec) ? "yes" : "no") << '\n';
  if (auto w = threshold_window(eps, static_cast<double>(spec.k), spec.delta_min, spec.delta_max)) {
    std::cout << "threshold_window " << fixed(w->first, 6) << ' ' << fixed(w->second, 6) << '\n';
  } else {
    std::cout << "threshold_window empty\n";
  }
  return kOk;
}

// ---- certify -------------------------------------------------------------

struct CertifyArgs {
  std::string atoms, codes, dump, model, fixture, out;
  std::string layer = "0";
  double k = 1.0;
  std::uint64_t seed = 0;
};

int run_certify(const CertifyArgs& a) {
  std::vector<QuantileRow> rows;
  if (!a.fixture.empty()) {
    std::ifstream in(a.fixture);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + a.fixture);
    const json fx = json::parse(in);
    for (const json& layer : fx.at("layers")) {
      const std::vector<double> mu = expand_runs(layer.at("coherence"));
      const std::vector<double> ks = expand_runs(layer.at("sparsity"));
      rows.push_back({layer.at("layer").dump(), max_uniqueness_quantile(mu, ks)});
    }
  } else {
    Matrix atom_matrix;
    std::vector<double> ks;
    if (!a.atoms.empty()) {
      if (a.codes.empty()) throw Error(ErrorCode::InvalidArgument, "--atoms needs --codes");
      atom_matrix = load_atoms(a.atoms).data();
      const std::vector<SparseCode> codes = load_codes(a.codes);
      for (const SparseCode& c : codes) ks.push_back(static_cast<double>(c.k()));
    } else if (!a.dump.empty()) {
      const ActivationSet set = read_dump(a.dump);
      if (!a.model.empty()) {
        const SaeModel model = load_model(a.model);
        atom_matrix = model.w_dec;
        ks = sparsity_levels(forward(model, set.data).code);
      } else {
        atom_matrix = set.data;
        ks.assign(1, a.k);
      }
    } else {
      throw Error(ErrorCode::InvalidArgument, "certify needs --atoms/--codes, --dump or --fixture");
    }
    const AtomSet atoms(std::move(atom_matrix));
    AtomSet unit = atoms;
    if (atoms.full_row_rank()) {
      unit = normalize_atoms(atoms, metric_from_atoms(atoms));
    } else {
      // Few vectors in a large space (an entity dump): no atomic metric exists,
      // so plain cosines are used.
      std::cerr << "atomskit: vectors span " << atoms.rank() << " of " << atoms.ambient_dim()
                << " dimensions; using Euclidean cosines\n";
      unit = AtomSet(atoms.data().colwise().normalized());
    }
    CoherenceOptions opts;
    opts.seed = a.seed;
    const std::vector<double> mu = pairwise_coherences(unit, opts);
    rows.push_back({a.layer, max_uniqueness_quantile(mu, ks)});
  }
  std::ostringstream os;
  write_quantile_table(os, rows);
  emit(a.out, os.str());
  return kOk;
}

// ---- recover -------------------------------------------------------------

struct RecoverArgs {
  RecoveryConfig config;
  double epsilon_target = -1.0;
  std::string out;
};

int run_recover(const RecoverArgs& a) {
  RecoveryConfig config = a.config;
  if (a.epsilon_target >= 0.0) config.epsilon_target = a.epsilon_target;
  const RecoveryReport report = recovery_experiment(config);
  std::ostringstream os;
  write_recovery_table(os, report);
  if (!a.out.empty()) write_text_atomic(a.out, os.str());
  std::cout << "trials " << report.trials.size() << '\n';
  std::cout << "certified " << report.certified << '\n';
  if (auto rate = report.success_rate()) {
    std::cout << "success_rate " << fixed(*rate, 6) << '\n';
  } else {
    std::cout << "success_rate n/a\n";
  }
  if (report.oracle_checked > 0) {
    std::cout << "oracle_agreement " << report.oracle_agreed << '/' << report.oracle_checked << '\n';
  }
  return kOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  TrainConfig config;
  std::string data, atoms, model_out, curve_out;
  bool pareto = false;
};

int run_train(const TrainArgs& a) {
  const ActivationSet data = read_dump(a.data);
  TrainResult result = train(data, a.config);
  const SaeModel model = a.pareto ? select_pareto(result.checkpoints, a.config.lambda).model : result.model;
  const EvalReport e = evaluate(model, data.data);
  std::cout << "r_squared " << fixed(e.r_squared, 6) << '\n';
  std::cout << "avg_l0 " << fixed(e.avg_l0, 3) << '\n';
  std::cout << "loss_reconstruct " << fixed(e.loss_reconstruct, 6) << '\n';
  std::cout << "loss_sparsity " << fixed(e.loss_sparsity, 6) << '\n';
  try {
    std::cout << "mean_alignment " << fixed(alignment(model).mean_alignment, 6) << '\n';
  } catch (const Error&) {
    std::cout << "mean_alignment n/a\n";
  }
  if (!a.atoms.empty()) {
    const AtomMatch m = match_atoms(load_atoms(a.atoms), model.w_dec);
    std::cout << "matched_fraction " << fixed(m.matched_fraction, 6) << '\n';
  }
  if (!a.model_out.empty()) {
    save_model(a.model_out, model, {{"lambda", a.config.lambda}, {"seed", a.config.seed}});
  }
  if (!a.curve_out.empty()) {
    std::ostringstream os;
    write_training_curve(os, result.checkpoints);
    write_text_atomic(a.curve_out, os.str());
  }
  return kOk;
}

// ---- shift ---------------------------------------------------------------

struct ShiftArgs {
  std::string dump, atoms, out;
  double bin_width = 1.0;
};

int run_shift(const ShiftArgs& a) {
  const ActivationSet set = read_dump(a.dump);
  const AngleStats euclid = angle_stats(set.data, nullptr, a.bin_width);
  std::optional<AngleStats> atomic;
  if (!a.atoms.empty()) {
    const MetricMatrix metric = metric_from_atoms(load_atoms(a.atoms));
    atomic = angle_stats(set.data, &metric, a.bin_width);
  } else {
    const AtomSet self(set.data);
    if (self.full_row_rank()) {
      const MetricMatrix metric = metric_from_atoms(self);
      atomic = angle_stats(set.data, &metric, a.bin_width);
    }
  }
  std::cout << "euclidean_centroid " << fixed(euclid.centroid_deg, 2) << '\n';
  if (atomic) std::cout << "atomic_centroid " << fixed(atomic->centroid_deg, 2) << '\n';
  if (!a.out.empty()) {
    std::ostringstream os;
    os << "bin_start_deg,euclidean" << (atomic ? ",atomic" : "") << '\n';
    for (std::size_t b = 0; b < euclid.histogram.size(); ++b) {
      os << fixed(static_cast<double>(b) * a.bin_width, 3) << ',' << euclid.histogram[b];
      if (atomic) os << ',' << atomic->histogram[b];
      os << '\n';
    }
    write_text_atomic(a.out, os.str());
  }
  return kOk;
}

// ---- sweep ---------------------------------------------------------------

struct SweepArgs {
  SynthSpec spec;
  TrainConfig config;
  std::vector<Index> sizes{1000, 2000, 4000};
  std::vector<Index> widths{128, 256, 512};
  unsigned jobs = 1;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  a.spec.validate();
  SynthSpec base = a.spec;
  base.samples = *std::max_element(a.sizes.begin(), a.sizes.end());
  const AtomSet atoms = gen_atoms(base);
  const ActivationSet full = gen_dataset(atoms, gen_codes(base));

  struct Cell {
    Index samples, width;
    double r2 = 0.0, l0 = 0.0;
  };
  std::vector<Cell> cells;
  for (Index s : a.sizes)
    for (Index w : a.widths) cells.push_back({s, w});
  parallel_for(cells.size(), a.jobs, [&](std::size_t i) {
    Cell& cell = cells[i];
    ActivationSet subset;
    subset.data = full.data.leftCols(cell.samples);
    TrainConfig config = a.config;
    config.width = cell.width;
    const TrainResult r = train(subset, config);
    const EvalReport e = evaluate(r.model, subset.data);
    cell.r2 = e.r_squared;
    cell.l0 = e.avg_l0;
  });
  std::ostringstream os;
  os << "samples,width,r2,avg_l0\n";
  for (const Cell& c : cells) os << c.samples << ',' << c.width << ',' << fixed(c.r2, 6) << ',' << fixed(c.l0, 3) << '\n';
  emit(a.out, os.str());
  return kOk;
}

// ---- match ---------------------------------------------------------------

struct MatchArgs {
  std::string atoms, query, out;
  std::vector<double> vector;
  int top = 5;
};

int run_match(const MatchArgs& a) {
  const AtomSet atoms = load_atoms(a.atoms);
  const MetricMatrix metric = metric_from_atoms(atoms);
  Matrix queries;
  if (!a.query.empty()) {
    queries = read_dump(a.query).data;
  } else if (!a.vector.empty()) {
    queries = Eigen::Map<const Vector>(a.vector.data(), static_cast<Index>(a.vector.size()));
  } else {
    throw Error(ErrorCode::InvalidArgument, "match needs --query or --vector");
  }
  if (a.top < 1) throw Error(ErrorCode::InvalidArgument, "--top must be positive");
  const Matrix scores = atom_match_batch(atoms, metric, queries);
  const Vector atom_norms = (atoms.data().transpose() * metric.s_tilde * atoms.data()).diagonal().cwiseSqrt();

  std::ostringstream os;
  os << "query,rank,atom,score,naip\n";
  for (Index q = 0; q < queries.cols(); ++q) {
    const double qn = std::sqrt(queries.col(q).dot(metric.s_tilde * queries.col(q)));
    std::vector<Index> order(static_cast<std::size_t>(atoms.count()));
    std::iota(order.begin(), order.end(), Index{0});
    auto naip = [&](Index j) { return qn > 0.0 ? scores(j, q) / (qn * atom_norms(j)) : 0.0; };
    std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return naip(x) > naip(y); });
    const int top = std::min<int>(a.top, static_cast<int>(order.size()));
    for (int r = 0; r < top; ++r) {
      const Index j = order[static_cast<std::size_t>(r)];
      os << q << ',' << r + 1 << ',' << j << ',' << fixed(scores(j, q), 8) << ',' << fixed(naip(j), 8) << '\n';
    }
  }
  emit(a.out, os.str());
  return kOk;
}

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Random seed (default from ATOMSKIT_SEED, else 0)")->envname("ATOMSKIT_SEED");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atomskit: atomic inner products, recovery certificates and threshold SAEs"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; command-line flags take precedence");
  app.allow_config_extras(false);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate atoms, codes and a measurement dump");
  c_synth->set_help_flag("--help", "Print this help message and exit");
  c_synth->add_option("--h", synth.spec.h, "Ambient dimension")->capture_default_str();
  c_synth->add_option("--n", synth.spec.n, "Number of atoms")->capture_default_str();
  c_synth->add_option("--k", synth.spec.k, "Nonzeros per code")->capture_default_str();
  c_synth->add_option("--delta-min", synth.spec.delta_min, "Smallest active amplitude")->capture_default_str();
  c_synth->add_option("--delta-max", synth.spec.delta_max, "Largest active amplitude")->capture_default_str();
  c_synth->add_option("--samples", synth.spec.samples, "Number of codes")->capture_default_str();
  c_synth->add_option("--epsilon-target", synth.epsilon_target, "Resample until coherence <= target");
  c_synth->add_flag("--orthonormal", synth.spec.orthonormal, "Orthonormal atoms (requires n == h)");
  c_synth->add_option("--out", synth.out, "Output directory")->capture_default_str();
  add_seed(c_synth, synth.spec.seed);

  CertifyArgs cert;
  auto* c_cert = app.add_subcommand("certify", "Quantile uniqueness criterion (q, mu_q, K_q)");
  auto* o_atoms = c_cert->add_option("--atoms", cert.atoms, "Atom dump");
  auto* o_codes = c_cert->add_option("--codes", cert.codes, "Code dump");
  auto* o_dump = c_cert->add_option("--dump", cert.dump, "Activation dump");
  auto* o_model = c_cert->add_option("--model", cert.model, "SAE model; atoms are its decoder columns");
  auto* o_fixture = c_cert->add_option("--fixture", cert.fixture, "Run-length JSON of per-layer samples");
  o_codes->needs(o_atoms);
  o_atoms->needs(o_codes);
  o_model->needs(o_dump);
  o_fixture->excludes(o_atoms)->excludes(o_dump);
  o_atoms->excludes(o_dump);
  c_cert->add_option("--k", cert.k, "Sparsity assumed for a bare --dump")->capture_default_str();
  c_cert->add_option("--layer", cert.layer, "Label for the table row")->capture_default_str();
  c_cert->add_option("--out", cert.out, "Table output (default stdout)");
  add_seed(c_cert, cert.seed);

  RecoverArgs rec;
  auto* c_rec = app.add_subcommand("recover", "Planted-code basis pursuit trials");
  c_rec->set_help_flag("--help", "Print this help message and exit");
  c_rec->add_option("--h", rec.config.h)->capture_default_str();
  c_rec->add_option("--n", rec.config.n)->capture_default_str();
  c_rec->add_option("--k", rec.config.k)->capture_default_str();
  c_rec->add_option("--trials", rec.config.trials)->capture_default_str();
  c_rec->add_option("--delta-min", rec.config.delta_min)->capture_default_str();
  c_rec->add_option("--delta-max", rec.config.delta_max)->capture_default_str();
  c_rec->add_option("--epsilon-target", rec.epsilon_target, "Coherence ceiling for generated atoms");
  c_rec->add_option("--tol", rec.config.solver.tol, "Solver tolerance")->capture_default_str();
  c_rec->add_option("--jobs", rec.config.jobs, "Parallel trials")->capture_default_str();
  c_rec->add_option("--out", rec.out, "Per-trial CSV");
  add_seed(c_rec, rec.config.seed);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a threshold SAE on a dump");
  c_train->add_option("--data", tr.data, "Activation dump")->required();
  c_train->add_option("--atoms", tr.atoms, "True atoms, for decoder matching");
  c_train->add_option("--width", tr.config.width)->capture_default_str();
  c_train->add_option("--lambda", tr.config.lambda)->capture_default_str();
  c_train->add_option("--tau-init", tr.config.tau_init)->capture_default_str();
  c_train->add_option("--ste-bandwidth", tr.config.ste_bandwidth)->capture_default_str();
  c_train->add_option("--lr", tr.config.learning_rate)->capture_default_str();
  c_train->add_option("--batch-size", tr.config.batch_size)->capture_default_str();
  c_train->add_option("--epochs", tr.config.epochs)->capture_default_str();
  c_train->add_option("--checkpoint-every", tr.config.checkpoint_every)->capture_default_str();
  c_train->add_flag("--pareto", tr.pareto, "Keep the Pareto-knee checkpoint instead of the last");
  c_train->add_option("--model-out", tr.model_out, "Model file");
  c_train->add_option("--curve-out", tr.curve_out, "Training-curve CSV");
  add_seed(c_train, tr.config.seed);

  ShiftArgs sh;
  auto* c_shift = app.add_subcommand("shift", "Pairwise angle distribution, Euclidean vs atomic");
  c_shift->add_option("--dump", sh.dump, "Activation dump")->required();
  c_shift->add_option("--atoms", sh.atoms, "Atoms defining the metric");
  c_shift->add_option("--bin-width", sh.bin_width, "Histogram bin width in degrees")->capture_default_str();
  c_shift->add_option("--out", sh.out, "Histogram CSV");

  SweepArgs sw;
  sw.config.epochs = 20;
  auto* c_sweep = app.add_subcommand("sweep", "Grid over dataset size x SAE width");
  c_sweep->set_help_flag("--help", "Print this help message and exit");
  c_sweep->add_option("--h", sw.spec.h)->capture_default_str();
  c_sweep->add_option("--n", sw.spec.n)->capture_default_str();
  c_sweep->add_option("--k", sw.spec.k)->capture_default_str();
  c_sweep->add_option("--sizes", sw.sizes, "Dataset sizes")->delimiter(',')->capture_default_str();
  c_sweep->add_option("--widths", sw.widths, "SAE widths")->delimiter(',')->capture_default_str();
  c_sweep->add_option("--epochs", sw.config.epochs)->capture_default_str();
  c_sweep->add_option("--lambda", sw.config.lambda)->capture_default_str();
  c_sweep->add_option("--jobs", sw.jobs, "Parallel cells")->capture_default_str();
  c_sweep->add_option("--out", sw.out, "CSV output (default stdout)");
  std::uint64_t sweep_seed = 0;
  add_seed(c_sweep, sweep_seed);

  MatchArgs mt;
  auto* c_match = app.add_subcommand("match", "Top atoms for query vectors by normalized atomic inner product");
  c_match->add_option("--atoms", mt.atoms, "Atom dump")->required();
  auto* o_query = c_match->add_option("--query", mt.query, "Dump of query vectors");
  c_match->add_option("--vector", mt.vector, "Single query, comma separated")->delimiter(',')->excludes(o_query);
  c_match->add_option("--top", mt.top)->capture_default_str();
  c_match->add_option("--out", mt.out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_cert) return run_certify(cert);
    if (*c_rec) return run_recover(rec);
    if (*c_train) return run_train(tr);
    if (*c_shift) return run_shift(sh);
    if (*c_sweep) {
      sw.spec.seed = sweep_seed;
      sw.config.seed = sweep_seed;
      return run_sweep(sw);
    }
    if (*c_match) return run_match(mt);
  } catch (const Error& e) {
    std::cerr << "atomskit: " << e.what() << '\n';
    const bool usage = e.code() == ErrorCode::InvalidSpec || e.code() == ErrorCode::InvalidArgument;
    return usage ? kUsage : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "atomskit: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
