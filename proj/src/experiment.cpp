#include "nlbayes/experiment.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "nlbayes/array_io.hpp"
#include "nlbayes/checksum.hpp"
#include "nlbayes/model_io.hpp"
#include "nlbayes/phase_retrieval.hpp"

namespace nlb {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Small pieces

OutputLock::OutputLock(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("output: cannot create '" + dir.string() + "': " + ec.message());
  path_ = dir / kFileName;
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    throw IoError("output: '" + dir.string() + "' is locked by another run (remove " + kFileName +
                  " if stale)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

RealVector sample_disc_image(const ImageShape& shape, const DiscSampler& sampler, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit;
  const auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  RealVector s = RealVector::Zero(shape.size());
  for (int n = 0; n < sampler.count; ++n) {
    const double cy = draw(sampler.center_lo, sampler.center_hi);
    const double cx = draw(sampler.center_lo, sampler.center_hi);
    const double radius = draw(sampler.radius_lo, sampler.radius_hi);
    // (lo, hi]: unit() lies in [0, 1).
    const double value = sampler.value_hi - (sampler.value_hi - sampler.value_lo) * unit(rng);
    for (Index i = 0; i < shape.height; ++i) {
      for (Index j = 0; j < shape.width; ++j) {
        const double dy = static_cast<double>(i) - cy;
        const double dx = static_cast<double>(j) - cx;
        if (dy * dy + dx * dx <= radius * radius) s[i * shape.width + j] = value;
      }
    }
  }
  return s;
}

RealVector poisson_counts(const RealVector& mean, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RealVector y(mean.size());
  for (Index m = 0; m < mean.size(); ++m) {
    if (!(mean[m] >= 0.0) || !std::isfinite(mean[m])) {
      throw NumericalError("poisson: invalid mean at entry " + std::to_string(m));
    }
    if (mean[m] == 0.0) {
      y[m] = 0.0;
      continue;
    }
    std::poisson_distribution<std::int64_t> dist(mean[m]);
    y[m] = static_cast<double>(dist(rng));
  }
  return y;
}

std::optional<std::string> CommandResult::metric(const std::string& key) const {
  for (const auto& [k, v] : metrics) {
    if (k == key) return v;
  }
  return std::nullopt;
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

// Rethrows nlb errors with the failing stage prefixed, preserving the type.
template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const LoadError& e) {
    throw LoadError(e.kind(), name + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(name + ": " + e.what());
  } catch (const InitializationError& e) {
    throw InitializationError(name + ": " + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

// Output directory bookkeeping: artifacts, metrics and the manifest.
class Workspace {
 public:
  Workspace(const ExperimentConfig& cfg, const CommandOptions& opts, std::string command)
      : cfg_(cfg),
        opts_(opts),
        command_(std::move(command)),
        dir_(output_dir(cfg, opts)),
        lock_(dir_),
        hash_(hex32(config_hash(cfg))),
        start_(std::chrono::steady_clock::now()) {}

  static fs::path output_dir(const ExperimentConfig& cfg, const CommandOptions& opts) {
    fs::path dir = opts.output.empty() ? cfg.output : opts.output;
    if (dir.empty()) throw ConfigError("config: no output directory (set 'output' or pass --output)");
    return dir;
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }

  void log(const std::string& message) const {
    if (opts_.verbose && opts_.log) *opts_.log << "[" << command_ << "] " << message << std::endl;
  }

  void array(const std::string& name, const Array& a) {
    write_array(dir_ / name, a);
    artifacts_.push_back({name, hex32(file_crc32(dir_ / name))});
  }

  void image(const std::string& name, const RealVector& s, const ImageShape& shape) {
    Array a = Array::from(s);
    a.reshape({static_cast<std::uint64_t>(shape.height), static_cast<std::uint64_t>(shape.width)});
    array(name, a);
  }

  void text(const std::string& name, const std::string& body) {
    write_text_atomic(dir_ / name, body);
    artifacts_.push_back({name, hex32(file_crc32(dir_ / name))});
  }

  void weights(const fs::path& path) {
    weights_path_ = path;
    weights_crc_ = hex32(file_crc32(path));
  }

  void metric(const std::string& key, const std::string& value) { result_.metrics.emplace_back(key, value); }
  void metric(const std::string& key, double value) { metric(key, format_double(value)); }
  void metric(const std::string& key, std::int64_t value) { metric(key, std::to_string(value)); }

  CommandResult finish() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::string body = "command=" + command_ + "\nconfig_hash=" + hash_ + "\n";
    for (const auto& [k, v] : result_.metrics) body += k + "=" + v + "\n";
    body += "wall_time_seconds=" + format_double(seconds) + "\n";
    write_text_atomic(dir_ / "metrics.txt", body);

    ordered_json m;
    m["command"] = command_;
    m["config_hash"] = hash_;
    m["seeds"] = {{"master", cfg_.seed},
                  {"matrix", cfg_.matrix_seed()},
                  {"truth", cfg_.truth_seed()},
                  {"noise", cfg_.noise_seed()},
                  {"init", cfg_.init_seed()},
                  {"chain", cfg_.chain_seed()}};
    if (weights_path_.empty()) {
      m["weights"] = nullptr;
    } else {
      m["weights"] = {{"path", weights_path_.string()}, {"crc32", weights_crc_}};
    }
    ordered_json list = ordered_json::array();
    for (const auto& [name, crc] : artifacts_) {
      list.push_back({{"file", name}, {"config_hash", hash_}, {"crc32", crc}});
    }
    // metrics.txt carries the wall time, so it has no stable checksum.
    list.push_back({{"file", "metrics.txt"}, {"config_hash", hash_}, {"crc32", nullptr}});
    m["artifacts"] = std::move(list);
    write_text_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
    result_.metrics.emplace_back("wall_time_seconds", format_double(seconds));
    return result_;
  }

 private:
  const ExperimentConfig& cfg_;
  const CommandOptions& opts_;
  std::string command_;
  fs::path dir_;
  OutputLock lock_;
  std::string hash_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
  fs::path weights_path_;
  std::string weights_crc_;
  CommandResult result_;
};

Modality require_modality(const ExperimentConfig& cfg) {
  if (!cfg.modality) throw ConfigError("config: 'modality' is required");
  return *cfg.modality;
}

// Loads the prior; the config cap overrides (or adds) the augmentation.
struct Prior {
  LoadedModel model;
  OpPtr<double> op;
};

Prior load_prior(const ExperimentConfig& cfg, Workspace* ws) {
  return stage("load weights", [&] {
    if (cfg.weights.empty()) throw ConfigError("config: 'prior.weights' is required");
    if (!fs::exists(cfg.weights)) {
      throw LoadError(LoadError::Kind::kTruncated, "weight file '" + cfg.weights.string() + "' does not exist");
    }
    Prior p{load_model(cfg.weights), nullptr};
    if (cfg.scale_cap) p.model.scale_cap = cfg.scale_cap;
    p.op = p.model.prior();
    if (ws) ws->weights(cfg.weights);
    return p;
  });
}

std::shared_ptr<SensingMatrix> make_matrix(const ExperimentConfig& cfg) {
  return std::make_shared<SensingMatrix>(make_sensing_matrix(cfg.measurement_count(), cfg.image_shape().size(),
                                                             cfg.matrix_variance, cfg.matrix_seed()));
}

std::shared_ptr<BpmOperator> make_bpm(const ExperimentConfig& cfg) {
  std::vector<IncidentWave> waves;
  for (double a : illumination_angles(cfg.angles, cfg.theta)) waves.push_back(make_plane_wave(cfg.grid, a, cfg.sensor));
  return std::make_shared<BpmOperator>(cfg.grid, std::move(waves), cfg.sensor, cfg.threads);
}

// Per-component sigma of the likelihood. Complex noise of variance v per
// entry splits evenly over its real and imaginary parts.
NoiseModel noise_model(const ExperimentConfig& cfg) {
  if (cfg.noise == NoiseKind::kPoisson) return NoiseModel::poisson();
  const double per_component = cfg.modality == Modality::kOdt ? cfg.noise_variance / 2.0 : cfg.noise_variance;
  return NoiseModel::gaussian(std::sqrt(per_component));
}

fs::path default_path(const fs::path& configured, const fs::path& dir, const char* name) {
  return configured.empty() ? dir / name : configured;
}

std::optional<RealVector> read_truth(const ExperimentConfig& cfg, const Workspace& ws, Index pixels) {
  const fs::path path = default_path(cfg.truth, ws.dir(), "truth.arr");
  if (!fs::exists(path)) {
    if (!cfg.truth.empty()) throw IoError("truth: '" + path.string() + "' does not exist");
    return std::nullopt;
  }
  RealVector t = read_array(path).as_real();
  if (t.size() != pixels) {
    throw ConfigError("truth: image has " + std::to_string(t.size()) + " pixels, expected " + std::to_string(pixels));
  }
  return t;
}

template <typename Out>
Vector<Out> read_measurements(const ExperimentConfig& cfg, const Workspace& ws, Index expected) {
  return stage("read measurements", [&] {
    const fs::path path = default_path(cfg.measurements, ws.dir(), "y.arr");
    if (!fs::exists(path)) throw IoError("'" + path.string() + "' does not exist (run simulate first)");
    const Array a = read_array(path);
    Vector<Out> y;
    if constexpr (std::is_same_v<Out, double>) {
      y = a.as_real();
    } else {
      y = a.as_complex();
    }
    if (y.size() != expected) {
      throw ConfigError("'" + path.string() + "' holds " + std::to_string(y.size()) + " measurements, expected " +
                        std::to_string(expected));
    }
    return y;
  });
}

// ---------------------------------------------------------------------------
// Baselines

struct BaselineOutcome {
  SolverResult result;
  double tau = 0.0;
  std::optional<GridSearchResult> grid;
};

template <typename Out>
BaselineOutcome run_baseline(const ExperimentConfig& cfg, BaselineSolver solver, const OpPtr<Out>& forward,
                             const Vector<Out>& y, const std::optional<RealVector>& truth, bool allow_grid) {
  const ImageShape shape = cfg.image_shape();
  const auto solve = [&](double tau) {
    VariationalConfig vc = cfg.baseline;
    vc.tau_reg = tau;
    if (solver == BaselineSolver::kTikhonov) {
      if constexpr (std::is_same_v<Out, double>) {
        if (cfg.modality != Modality::kPhaseRetrieval || cfg.noise != NoiseKind::kPoisson) {
          throw ConfigError("baseline: tikhonov needs phase_retrieval with poisson noise");
        }
        auto pr = std::dynamic_pointer_cast<const PhaseRetrievalOp>(forward);
        return tikhonov_poisson(pr->matrix(), y, shape, vc);
      } else {
        throw ConfigError("baseline: tikhonov needs phase_retrieval with poisson noise");
      }
    }
    RealVector start = RealVector::Zero(shape.size());
    if constexpr (std::is_same_v<Out, double>) {
      if (auto pr = std::dynamic_pointer_cast<const PhaseRetrievalOp>(forward)) start = flat_intensity_start(pr->matrix(), y);
    }
    return tv_fista<Out>(forward, y, cfg.noise, shape, vc, start);
  };

  BaselineOutcome out;
  if (allow_grid && !cfg.baseline.grid.empty()) {
    if (!truth) throw ConfigError("baseline: a tau_reg grid needs a ground-truth image");
    out.grid = grid_search(solve, cfg.baseline.grid, *truth, cfg.threads);
    out.tau = out.grid->best_tau;
    out.result = solve(out.tau);
  } else {
    out.tau = cfg.baseline.tau_reg;
    out.result = solve(out.tau);
  }
  return out;
}

void record_baseline(Workspace& ws, const BaselineOutcome& b, const std::optional<RealVector>& truth,
                     const std::string& prefix) {
  ws.metric(prefix + "tau_reg", b.tau);
  ws.metric(prefix + "iterations", static_cast<std::int64_t>(b.result.iterations));
  ws.metric(prefix + "objective", b.result.objective);
  if (truth) ws.metric(prefix + "mse", mean_squared_error(b.result.image, *truth));
  if (b.grid) {
    ws.metric(prefix + "best_at_grid_endpoint", static_cast<std::int64_t>(b.grid->best_at_endpoint));
    ws.text(prefix + "mse_table.csv", mse_table_csv(*b.grid));
  }
}

// ---------------------------------------------------------------------------
// Initialization shared by reconstruct and init-latent

template <typename Out>
struct InitOutcome {
  RealVector image;
  RealVector latent;
  double objective = 0.0;
};

template <typename Out>
InitOutcome<Out> initialize(const ExperimentConfig& cfg, Workspace& ws, const Prior& prior, const OpPtr<Out>& forward,
                            const Vector<Out>& y, const std::optional<RealVector>& truth) {
  const ImageShape shape = cfg.image_shape();
  InitOutcome<Out> init;
  switch (cfg.init_source) {
    case InitSource::kZeros:
      init.latent = RealVector::Zero(prior.op->in_dim());
      init.image = prior.op->forward(init.latent);
      init.objective = 0.0;
      return init;
    case InitSource::kFile: {
      const RealVector v = stage("read init", [&] {
        if (cfg.init_file.empty()) throw ConfigError("config: init source 'file' needs 'init.path'");
        return RealVector(read_array(cfg.init_file).as_real());
      });
      if (v.size() == prior.op->in_dim()) {
        init.latent = v;
        init.image = prior.op->forward(v);
        return init;
      }
      if (v.size() != shape.size()) {
        throw ConfigError("init: file holds " + std::to_string(v.size()) + " values; expected a latent of " +
                          std::to_string(prior.op->in_dim()) + " or an image of " + std::to_string(shape.size()));
      }
      init.image = v;
      break;
    }
    case InitSource::kTikhonov:
    case InitSource::kBaseline: {
      const auto solver = cfg.init_source == InitSource::kTikhonov ? BaselineSolver::kTikhonov : cfg.baseline_solver;
      const auto b = stage("init baseline", [&] { return run_baseline<Out>(cfg, solver, forward, y, truth, true); });
      record_baseline(ws, b, truth, "init_");
      init.image = b.result.image;
      break;
    }
  }
  ws.log("fitting latent to the initial image");
  LatentInitOptions lo = cfg.latent;
  lo.seed = cfg.init_seed();
  const auto fit = stage("init latent", [&] { return init_latent(*prior.op, init.image, lo); });
  init.latent = fit.z;
  init.objective = fit.objective;
  return init;
}

// ---------------------------------------------------------------------------
// Commands, dispatched on the measurement scalar type

template <typename Out>
OpPtr<Out> make_forward(const ExperimentConfig& cfg) {
  if constexpr (std::is_same_v<Out, double>) {
    return std::make_shared<PhaseRetrievalOp>(make_matrix(cfg));
  } else {
    return make_bpm(cfg);
  }
}

template <typename Out>
CommandResult reconstruct_impl(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const ImageShape shape = cfg.image_shape();
  std::optional<Prior> prior;
  if (cfg.pipeline == Pipeline::kMala) prior = load_prior(cfg, nullptr);  // fail fast, before any output

  Workspace ws(cfg, opts, "reconstruct");
  if (prior) ws.weights(cfg.weights);
  const OpPtr<Out> forward = make_forward<Out>(cfg);
  const Vector<Out> y = read_measurements<Out>(cfg, ws, forward->out_dim());
  const auto truth = stage("read truth", [&] { return read_truth(cfg, ws, shape.size()); });

  if (cfg.pipeline == Pipeline::kBaseline) {
    ws.log("solving the variational baseline");
    const auto b = stage("baseline", [&] { return run_baseline<Out>(cfg, cfg.baseline_solver, forward, y, truth, true); });
    ws.image("image.arr", b.result.image, shape);
    ws.array("history.arr", Array::from(RealVector(Eigen::Map<const RealVector>(
                                b.result.history.data(), static_cast<Index>(b.result.history.size())))));
    record_baseline(ws, b, truth, "");
    return ws.finish();
  }

  if (prior->op->out_dim() != shape.size()) {
    throw ConfigError("prior: generator produces " + std::to_string(prior->op->out_dim()) + " pixels but the image has " +
                      std::to_string(shape.size()));
  }
  MeasurementSet<Out> meas{y, forward, noise_model(cfg)};
  const LatentPosterior<Out> posterior = stage("posterior", [&] { return LatentPosterior<Out>(meas, prior->op); });

  const auto init = initialize<Out>(cfg, ws, *prior, forward, y, truth);
  ws.image("init_image.arr", init.image, shape);
  ws.array("init_latent.arr", Array::from(init.latent));
  const RealVector decoded = prior->op->forward(init.latent);

  SamplerConfig sc = cfg.sampler;
  sc.seed = cfg.chain_seed();
  ws.log("running MALA: " + std::to_string(sc.burn_in) + " burn-in + " + std::to_string(sc.samples) + " samples");
  RunningMoments moments(shape.size());
  const ChainRecord record = stage("sampling", [&] {
    return run_chain(posterior, sc, init.latent, [&](const ChainState& s) { moments.add(s.eval.image); });
  });
  const RealVector mean = moments.mean();
  const RealVector std = moments.count() > 1 ? moments.stddev() : RealVector::Zero(shape.size());

  ws.image("mean.arr", mean, shape);
  ws.image("std.arr", std, shape);
  ws.array("chain_latents.arr", Array::from(record.latent_samples));
  ws.array("chain_log_posterior.arr", Array::from(record.log_posterior_trace));

  ws.metric("latent_dim", static_cast<std::int64_t>(posterior.dim()));
  ws.metric("latent_fit_objective", init.objective);
  ws.metric("proposals", record.proposals);
  ws.metric("accepted", record.accept_count);
  ws.metric("acceptance_rate", record.acceptance_rate());
  ws.metric("nonfinite_rejects", record.nonfinite_rejects);
  ws.metric("floored_evaluations", record.floored_evaluations);
  if (truth) {
    ws.metric("mse_init", mean_squared_error(init.image, *truth));
    ws.metric("mse_init_decoded", mean_squared_error(decoded, *truth));
    ws.metric("mse_mean", mean_squared_error(mean, *truth));
  }
  return ws.finish();
}

template <typename Out>
CommandResult init_latent_impl(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const ImageShape shape = cfg.image_shape();
  const Prior prior = load_prior(cfg, nullptr);
  Workspace ws(cfg, opts, "init-latent");
  ws.weights(cfg.weights);
  std::optional<RealVector> truth = stage("read truth", [&] { return read_truth(cfg, ws, shape.size()); });
  OpPtr<Out> forward;
  Vector<Out> y;
  if (cfg.init_source == InitSource::kTikhonov || cfg.init_source == InitSource::kBaseline) {
    forward = make_forward<Out>(cfg);
    y = read_measurements<Out>(cfg, ws, forward->out_dim());
  }
  const auto init = initialize<Out>(cfg, ws, prior, forward, y, truth);
  const RealVector decoded = prior.op->forward(init.latent);
  ws.image("init_image.arr", init.image, shape);
  ws.array("latent.arr", Array::from(init.latent));
  ws.image("decoded.arr", decoded, shape);
  ws.metric("latent_fit_objective", init.objective);
  if (truth) ws.metric("mse_decoded", mean_squared_error(decoded, *truth));
  return ws.finish();
}

template <typename Out>
CommandResult grid_search_impl(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const ImageShape shape = cfg.image_shape();
  if (cfg.baseline.grid.empty()) throw ConfigError("grid-search: 'baseline.grid' is empty");
  Workspace ws(cfg, opts, "grid-search");
  const OpPtr<Out> forward = make_forward<Out>(cfg);
  const Vector<Out> y = read_measurements<Out>(cfg, ws, forward->out_dim());
  const auto truth = stage("read truth", [&] { return read_truth(cfg, ws, shape.size()); });
  if (!truth) throw ConfigError("grid-search: needs a ground-truth image ('truth' or <output>/truth.arr)");
  const auto b = stage("grid search", [&] { return run_baseline<Out>(cfg, cfg.baseline_solver, forward, y, truth, true); });
  ws.image("image.arr", b.result.image, shape);
  record_baseline(ws, b, truth, "");
  return ws.finish();
}

}  // namespace

// ---------------------------------------------------------------------------

CommandResult run_simulate(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const Modality modality = require_modality(cfg);
  const ImageShape shape = cfg.image_shape();
  if (cfg.truth_source == TruthSource::kNone) {
    throw ConfigError("simulate: missing ground truth source ('ground_truth.source')");
  }
  std::optional<Prior> prior;
  if (cfg.truth_source == TruthSource::kPrior) prior = load_prior(cfg, nullptr);

  Workspace ws(cfg, opts, "simulate");
  RealVector truth;
  switch (cfg.truth_source) {
    case TruthSource::kFile:
      truth = stage("read ground truth", [&] {
        if (cfg.truth_file.empty()) throw ConfigError("config: 'ground_truth.path' is required for source 'file'");
        return RealVector(read_array(cfg.truth_file).as_real());
      });
      if (truth.size() != shape.size()) {
        throw ConfigError("simulate: ground truth has " + std::to_string(truth.size()) + " pixels, expected " +
                          std::to_string(shape.size()));
      }
      break;
    case TruthSource::kDisc:
      truth = sample_disc_image(shape, cfg.disc, cfg.truth_seed());
      break;
    case TruthSource::kPrior: {
      ws.weights(cfg.weights);
      const auto& base = *prior->model.base;
      if (base.out_dim() != shape.size()) {
        throw ConfigError("simulate: generator produces " + std::to_string(base.out_dim()) +
                          " pixels but the image has " + std::to_string(shape.size()));
      }
      ChainRng rng(cfg.truth_seed());
      const RealVector z = rng.gaussian_vector(base.in_dim());
      truth = base.forward(z);
      ws.array("truth_latent.arr", Array::from(z));
      break;
    }
    case TruthSource::kNone:
      break;
  }
  truth *= cfg.truth_scale;
  ws.image("truth.arr", truth, shape);

  if (modality == Modality::kPhaseRetrieval) {
    const auto matrix = make_matrix(cfg);
    const RealVector y0 = pr_forward(*matrix, truth);
    RealVector y;
    if (cfg.noise == NoiseKind::kPoisson) {
      y = stage("noise", [&] { return poisson_counts(y0, cfg.noise_seed()); });
    } else {
      ChainRng rng(cfg.noise_seed());
      y = y0 + std::sqrt(cfg.noise_variance) * rng.gaussian_vector(y0.size());
    }
    ws.array("y.arr", Array::from(y));
    ws.metric("measurements", static_cast<std::int64_t>(y.size()));
    ws.metric("mean_clean_intensity", y0.mean());
    ws.metric("mean_measurement", y.mean());
  } else {
    const auto op = make_bpm(cfg);
    const ComplexVector y0 = op->forward(truth);
    ChainRng rng(cfg.noise_seed());
    const double sigma = std::sqrt(cfg.noise_variance / 2.0);
    ComplexVector y(y0.size());
    for (Index m = 0; m < y.size(); ++m) {
      const double re = rng.gaussian();
      const double im = rng.gaussian();
      y[m] = y0[m] + sigma * Complex(re, im);
    }
    ws.array("y.arr", Array::from(y));
    ws.metric("measurements", static_cast<std::int64_t>(y.size()));
    ws.metric("snr_db", 10.0 * std::log10(y0.squaredNorm() / std::max((y - y0).squaredNorm(), 1e-300)));
  }
  ws.metric("pixels", static_cast<std::int64_t>(shape.size()));
  ws.metric("truth_min", truth.minCoeff());
  ws.metric("truth_max", truth.maxCoeff());
  ws.text("config.json", config_snapshot(cfg));
  return ws.finish();
}

CommandResult run_reconstruct(const ExperimentConfig& cfg, const CommandOptions& opts) {
  return require_modality(cfg) == Modality::kOdt ? reconstruct_impl<Complex>(cfg, opts)
                                                 : reconstruct_impl<double>(cfg, opts);
}

CommandResult run_init_latent(const ExperimentConfig& cfg, const CommandOptions& opts) {
  return require_modality(cfg) == Modality::kOdt ? init_latent_impl<Complex>(cfg, opts)
                                                 : init_latent_impl<double>(cfg, opts);
}

CommandResult run_grid_search(const ExperimentConfig& cfg, const CommandOptions& opts) {
  return require_modality(cfg) == Modality::kOdt ? grid_search_impl<Complex>(cfg, opts)
                                                 : grid_search_impl<double>(cfg, opts);
}

CommandResult run_adjoint_test(const ExperimentConfig& cfg, const CommandOptions& opts) {
  std::optional<Prior> prior;
  if (!cfg.weights.empty()) prior = load_prior(cfg, nullptr);
  Workspace ws(cfg, opts, "adjoint-test");
  if (prior) ws.weights(cfg.weights);

  std::string csv = "operator,defect,tolerance,pass\n";
  bool all_pass = true;
  std::uint64_t seed = cfg.seed;
  const auto check = [&](const std::string& label, const auto& op) {
    ws.log("checking " + label);
    const double defect = stage("adjoint " + label, [&] { return adjoint_check(op, cfg.adjoint_trials, seed++); });
    const bool pass = defect <= cfg.adjoint_tolerance;
    all_pass = all_pass && pass;
    csv += label + "," + format_double(defect) + "," + format_double(cfg.adjoint_tolerance) + "," +
           (pass ? "1" : "0") + "\n";
    ws.metric("defect_" + label, defect);
  };

  if (cfg.modality == Modality::kPhaseRetrieval) {
    const auto forward = make_forward<double>(cfg);
    check("forward", *forward);
    if (prior) check("composition", *compose<double>(forward, prior->op));
  } else if (cfg.modality == Modality::kOdt) {
    const auto forward = make_forward<Complex>(cfg);
    check("forward", *forward);
    if (prior) check("composition", *compose<Complex>(forward, prior->op));
  }
  if (prior) {
    check("generator", *prior->model.base);
    if (prior->model.augmented()) check("prior", *prior->op);
  }
  if (csv.find('\n') == csv.size() - 1) throw ConfigError("adjoint-test: nothing to check (set modality or prior.weights)");
  ws.text("adjoint.csv", csv);
  ws.metric("all_pass", static_cast<std::int64_t>(all_pass));
  auto result = ws.finish();
  if (!all_pass) throw NumericalError("adjoint-test: defect above tolerance (see adjoint.csv)");
  return result;
}

std::string run_model_info(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const Prior prior = load_prior(cfg, nullptr);
  const auto& base = *prior.model.base;
  std::ostringstream os;
  os << "path=" << cfg.weights.string() << "\n";
  os << "crc32=" << hex32(file_crc32(cfg.weights)) << "\n";
  os << "input=" << to_string(base.input_shape()) << "\n";
  os << "output=" << to_string(base.output_shape()) << "\n";
  os << "parameters=" << base.parameter_count() << "\n";
  os << "augmented=" << (prior.model.augmented() ? 1 : 0) << "\n";
  if (prior.model.scale_cap) os << "scale_cap=" << format_double(*prior.model.scale_cap) << "\n";
  os << "latent_dim=" << prior.op->in_dim() << "\n";
  os << "layers=" << base.layers().size() << "\n";
  TensorShape shape = base.input_shape();
  for (std::size_t i = 0; i < base.layers().size(); ++i) {
    const auto& layer = base.layers()[i];
    shape = output_shape(layer, shape);
    os << "layer." << i << "=" << layer_name(layer_kind(layer)) << " -> " << to_string(shape) << "\n";
  }
  const std::string text = os.str();
  if (!opts.output.empty() || !cfg.output.empty()) {
    Workspace ws(cfg, opts, "model-info");
    ws.weights(cfg.weights);
    ws.text("model_info.txt", text);
    ws.finish();
  }
  return text;
}

}  // namespace nlb
