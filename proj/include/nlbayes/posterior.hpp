#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "nlbayes/operator.hpp"

namespace nlb {

// ---------------------------------------------------------------------------
// Likelihoods

enum class NoiseKind { kGaussian, kPoisson };

struct NoiseModel {
  NoiseKind kind = NoiseKind::kGaussian;
  double sigma = 1.0;  // per real component; Gaussian only

  static NoiseModel gaussian(double sigma) { return {NoiseKind::kGaussian, sigma}; }
  static NoiseModel poisson() { return {NoiseKind::kPoisson, 0.0}; }

  void validate() const;
};

std::string to_string(NoiseKind kind);

/// Poisson intensities are floored here before the log.
inline constexpr double kPoissonFloor = 1e-12;

/// Log-likelihood up to an additive constant and its gradient with respect
/// to y0 under the real inner product.
template <typename Scalar>
struct LikelihoodEval {
  double value = 0.0;
  Vector<Scalar> cotangent;
  std::size_t floored = 0;  // Poisson entries that hit the floor
};

/// Gaussian: -|y - y0|^2 / (2 sigma^2), gradient (y - y0) / sigma^2.
/// Poisson:  sum(y log y0 - y0), gradient y / y0 - 1 (y0 floored at kPoissonFloor;
/// floored entries contribute the derivative of the floored expression, -1).
template <typename Scalar, typename DerivedY, typename DerivedY0>
LikelihoodEval<Scalar> evaluate_likelihood(const NoiseModel& noise,
                                           const Eigen::MatrixBase<DerivedY>& y,
                                           const Eigen::MatrixBase<DerivedY0>& y0) {
  if (y.size() != y0.size()) {
    throw ConfigError("likelihood: measurement length " + std::to_string(y.size()) +
                      " does not match prediction length " + std::to_string(y0.size()));
  }
  LikelihoodEval<Scalar> out;
  if (noise.kind == NoiseKind::kGaussian) {
    const double inv_var = 1.0 / (noise.sigma * noise.sigma);
    out.cotangent = (y - y0) * inv_var;
    out.value = -0.5 * (y - y0).squaredNorm() * inv_var;
    return out;
  }
  if constexpr (!std::is_same_v<Scalar, double>) {
    throw ConfigError("likelihood: Poisson noise requires real-valued measurements");
  } else {
    out.cotangent.resize(y.size());
    double value = 0.0;
    for (Index m = 0; m < y.size(); ++m) {
      const double mu = y0[m];
      if (mu > kPoissonFloor) {
        value += y[m] * std::log(mu) - mu;
        out.cotangent[m] = y[m] / mu - 1.0;
      } else {
        if (y[m] != 0.0) value += y[m] * std::log(kPoissonFloor);
        value -= mu;
        out.cotangent[m] = -1.0;
        ++out.floored;
      }
    }
    out.value = value;
    return out;
  }
}

template <typename DerivedY, typename DerivedY0>
double log_likelihood(const NoiseModel& noise, const Eigen::MatrixBase<DerivedY>& y,
                      const Eigen::MatrixBase<DerivedY0>& y0) {
  return evaluate_likelihood<typename DerivedY::Scalar>(noise, y, y0).value;
}

template <typename DerivedY, typename DerivedY0>
Vector<typename DerivedY::Scalar> dloglik_dy0(const NoiseModel& noise,
                                              const Eigen::MatrixBase<DerivedY>& y,
                                              const Eigen::MatrixBase<DerivedY0>& y0) {
  return evaluate_likelihood<typename DerivedY::Scalar>(noise, y, y0).cotangent;
}

/// Measurements y together with the forward model H and noise model.
template <typename Out>
struct MeasurementSet {
  Vector<Out> y;
  OpPtr<Out> forward;
  NoiseModel noise;

  void validate() const {
    if (!forward) throw ConfigError("measurement set: missing forward operator");
    noise.validate();
    if (y.size() != forward->out_dim()) {
      throw ConfigError("measurement set: " + std::to_string(y.size()) +
                        " measurements but forward operator '" + forward->name() + "' produces " +
                        std::to_string(forward->out_dim()));
    }
    if (noise.kind == NoiseKind::kPoisson) {
      if constexpr (!std::is_same_v<Out, double>) {
        throw ConfigError("measurement set: Poisson noise requires real measurements");
      } else {
        for (Index m = 0; m < y.size(); ++m) {
          if (!(y[m] >= 0.0) || y[m] != std::floor(y[m])) {
            throw ConfigError("measurement set: Poisson measurement " + std::to_string(m) +
                              " is not a non-negative integer");
          }
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Latent posterior

/// Log target density and its gradient at one point. `image` optionally
/// carries the decoded sample G_h(z) so summaries need not re-decode it.
struct DensityEval {
  double value = 0.0;
  RealVector gradient;
  RealVector image;
  std::size_t floored = 0;
};

/// log p(z | y) = likelihood_weight * log p(y | H(G_h(z))) - |z|^2 / 2, up to
/// the normalizing constant.
template <typename Out>
class LatentPosterior {
 public:
  LatentPosterior(MeasurementSet<Out> measurements, OpPtr<double> prior,
                  double likelihood_weight = 1.0)
      : meas_(std::move(measurements)), prior_(std::move(prior)), weight_(likelihood_weight) {
    meas_.validate();
    if (!prior_) throw ConfigError("latent posterior: missing prior");
    if (prior_->out_dim() != meas_.forward->in_dim()) {
      throw ConfigError("latent posterior: prior '" + prior_->name() + "' produces " +
                        std::to_string(prior_->out_dim()) + " pixels but forward '" +
                        meas_.forward->name() + "' expects " +
                        std::to_string(meas_.forward->in_dim()));
    }
  }

  [[nodiscard]] Index dim() const { return prior_->in_dim(); }

  [[nodiscard]] DensityEval evaluate(const RealVector& z) const {
    auto gen = prior_->linearize(z);
    auto fwd = meas_.forward->linearize(gen.value);
    if (!fwd.value.allFinite()) {
      throw NumericalError("latent posterior: non-finite forward output at |z| = " +
                           std::to_string(z.norm()));
    }
    auto lik = evaluate_likelihood<Out>(meas_.noise, meas_.y, fwd.value);
    DensityEval out;
    out.value = weight_ * lik.value - 0.5 * z.squaredNorm();
    const Vector<Out> cot = weight_ * lik.cotangent;
    out.gradient = gen.pullback(fwd.pullback(cot)) - z;
    out.image = std::move(gen.value);
    out.floored = lik.floored;
    return out;
  }

  [[nodiscard]] double log_density(const RealVector& z) const {
    const Vector<Out> y0 = meas_.forward->forward(prior_->forward(z));
    return weight_ * evaluate_likelihood<Out>(meas_.noise, meas_.y, y0).value -
           0.5 * z.squaredNorm();
  }

  [[nodiscard]] const MeasurementSet<Out>& measurements() const { return meas_; }
  [[nodiscard]] const OpPtr<double>& prior() const { return prior_; }

 private:
  MeasurementSet<Out> meas_;
  OpPtr<double> prior_;
  double weight_;
};

template <typename Out>
double log_posterior(const MeasurementSet<Out>& meas, OpPtr<double> prior, const RealVector& z) {
  return LatentPosterior<Out>(meas, std::move(prior)).log_density(z);
}

template <typename Out>
RealVector grad_log_posterior(const MeasurementSet<Out>& meas, OpPtr<double> prior,
                              const RealVector& z) {
  return LatentPosterior<Out>(meas, std::move(prior)).evaluate(z).gradient;
}

// ---------------------------------------------------------------------------
// MALA

struct SamplerConfig {
  double step = 1e-3;         // eta
  std::int64_t burn_in = 0;   // T_b, discarded proposals
  std::int64_t samples = 1;   // T, retained samples
  std::uint64_t seed = 0;
  std::int64_t thin = 1;      // keep every thin-th post-burn-in state

  void validate() const;
};

/// Deterministic randomness for one chain.
class ChainRng {
 public:
  explicit ChainRng(std::uint64_t seed) : engine_(seed) {}

  double gaussian() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  RealVector gaussian_vector(Index n) {
    RealVector v(n);
    for (Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

struct ChainState {
  RealVector z;
  DensityEval eval;
};

/// z + eta * grad + sqrt(2 eta) * noise.
inline RealVector mala_propose(const RealVector& z, const RealVector& gradient, double step,
                               const RealVector& noise) {
  return z + step * gradient + std::sqrt(2.0 * step) * noise;
}

/// log of the Metropolis-Hastings ratio
/// p(z') q(z | z') / (p(z) q(z' | z)), q(a | b) = exp(-|a - b - eta grad(b)|^2 / (4 eta)).
inline double mala_log_ratio(const RealVector& z, const DensityEval& at_z, const RealVector& prop,
                             const DensityEval& at_prop, double step) {
  const double forward = (prop - z - step * at_z.gradient).squaredNorm();
  const double backward = (z - prop - step * at_prop.gradient).squaredNorm();
  return at_prop.value - at_z.value - (backward - forward) / (4.0 * step);
}

/// Acceptance probability exp(min(0, log_ratio)).
inline double mala_acceptance(double log_ratio) { return std::exp(std::min(0.0, log_ratio)); }

struct StepOutcome {
  bool accepted = false;
  bool nonfinite = false;
  double acceptance = 0.0;
  std::size_t floored = 0;  // floored Poisson entries at the proposal
};

/// One MALA transition. On rejection the state is left untouched.
template <typename Target>
StepOutcome mala_step(const Target& target, ChainState& state, double step, ChainRng& rng) {
  const RealVector noise = rng.gaussian_vector(state.z.size());
  RealVector prop = mala_propose(state.z, state.eval.gradient, step, noise);
  const double u = rng.uniform();

  StepOutcome outcome;
  DensityEval at_prop;
  bool finite = prop.allFinite();
  if (finite) {
    try {
      at_prop = target.evaluate(prop);
      finite = std::isfinite(at_prop.value) && at_prop.gradient.allFinite();
    } catch (const NumericalError&) {
      finite = false;
    }
  }
  if (!finite) {
    outcome.nonfinite = true;
    return outcome;
  }
  outcome.floored = at_prop.floored;
  const double log_ratio = mala_log_ratio(state.z, state.eval, prop, at_prop, step);
  outcome.acceptance = mala_acceptance(log_ratio);
  if (u < outcome.acceptance) {
    state.z = std::move(prop);
    state.eval = std::move(at_prop);
    outcome.accepted = true;
  }
  return outcome;
}

/// Post-burn-in samples and acceptance statistics of one chain.
struct ChainRecord {
  RealMatrix latent_samples;      // samples x dim
  RealVector log_posterior_trace; // per retained sample
  std::int64_t proposals = 0;
  std::int64_t accept_count = 0;
  std::int64_t nonfinite_rejects = 0;
  std::int64_t floored_evaluations = 0;

  [[nodiscard]] double acceptance_rate() const {
    return proposals > 0 ? static_cast<double>(accept_count) / static_cast<double>(proposals) : 0.0;
  }
  [[nodiscard]] Index size() const { return latent_samples.rows(); }
};

using SampleObserver = std::function<void(const ChainState&)>;

/// Runs burn_in + samples * thin MALA transitions from z_init; retains every
/// thin-th state after burn-in. `observer` sees each retained state.
template <typename Target>
ChainRecord run_chain(const Target& target, const SamplerConfig& cfg, const RealVector& z_init,
                      const SampleObserver& observer = {}) {
  cfg.validate();
  if (!z_init.allFinite()) throw NumericalError("run_chain: non-finite initial latent");
  ChainRng rng(cfg.seed);
  ChainState state{z_init, target.evaluate(z_init)};
  if (!std::isfinite(state.eval.value) || !state.eval.gradient.allFinite()) {
    throw NumericalError("run_chain: non-finite log-density at the initial latent");
  }

  ChainRecord record;
  record.latent_samples.resize(cfg.samples, z_init.size());
  record.log_posterior_trace.resize(cfg.samples);
  const auto advance = [&] {
    const auto outcome = mala_step(target, state, cfg.step, rng);
    ++record.proposals;
    if (outcome.accepted) ++record.accept_count;
    if (outcome.floored > 0) ++record.floored_evaluations;
    if (outcome.nonfinite) ++record.nonfinite_rejects;
  };
  for (std::int64_t t = 0; t < cfg.burn_in; ++t) advance();
  for (std::int64_t t = 0; t < cfg.samples; ++t) {
    for (std::int64_t k = 0; k < cfg.thin; ++k) advance();
    record.latent_samples.row(t) = state.z.transpose();
    record.log_posterior_trace[t] = state.eval.value;
    if (observer) observer(state);
  }
  return record;
}

// ---------------------------------------------------------------------------
// Summaries

/// Streaming per-coordinate mean and variance (Welford), mergeable across chains.
class RunningMoments {
 public:
  RunningMoments() = default;
  explicit RunningMoments(Index dim) : mean_(RealVector::Zero(dim)), m2_(RealVector::Zero(dim)) {}

  void add(const RealVector& x);
  void merge(const RunningMoments& other);

  [[nodiscard]] std::int64_t count() const { return count_; }
  [[nodiscard]] const RealVector& mean() const { return mean_; }
  /// Sample standard deviation with divisor count - 1.
  [[nodiscard]] RealVector stddev() const;

 private:
  std::int64_t count_ = 0;
  RealVector mean_;
  RealVector m2_;
};

struct PosteriorSummary {
  RealVector mean;
  RealVector stddev;
};

/// Decodes every retained latent once and returns the pixelwise mean and
/// standard deviation of G_h(z_t).
PosteriorSummary summarize(const ChainRecord& record, const DifferentiableOp<double>& prior);

// ---------------------------------------------------------------------------
// Chain initialization

struct LatentInitOptions {
  int iters = 200;
  double step = 0.5;
  int restarts = 10;
  std::uint64_t seed = 0;
  int max_backtracks = 40;
};

struct LatentInit {
  RealVector z;
  double objective = 0.0;
  int restart = 0;
};

/// argmin_z |s_init - G_h(z)|^2 by backtracking gradient descent from seeded
/// random starts; returns the restart with the lowest final objective.
LatentInit init_latent(const DifferentiableOp<double>& prior, const RealVector& s_init,
                       const LatentInitOptions& options = {});

}  // namespace nlb
