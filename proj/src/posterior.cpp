#include "nlbayes/posterior.hpp"

namespace nlb {

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::kGaussian ? "gaussian" : "poisson";
}

void NoiseModel::validate() const {
  if (kind == NoiseKind::kGaussian && (!(sigma > 0.0) || !std::isfinite(sigma))) {
    throw ConfigError("noise: Gaussian sigma must be positive and finite");
  }
}

void SamplerConfig::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("sampler: step must be positive");
  if (burn_in < 0) throw ConfigError("sampler: burn_in must be non-negative");
  if (samples < 1) throw ConfigError("sampler: samples must be positive");
  if (thin < 1) throw ConfigError("sampler: thin must be positive");
}

void RunningMoments::add(const RealVector& x) {
  if (count_ == 0 && mean_.size() == 0) {
    mean_ = RealVector::Zero(x.size());
    m2_ = RealVector::Zero(x.size());
  }
  if (x.size() != mean_.size()) throw ConfigError("running moments: dimension mismatch");
  ++count_;
  const RealVector delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_.array() += delta.array() * (x - mean_).array();
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  if (other.mean_.size() != mean_.size()) throw ConfigError("running moments: dimension mismatch");
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  const RealVector delta = other.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += other.m2_ + delta.cwiseAbs2() * (na * nb / n);
  count_ += other.count_;
}

RealVector RunningMoments::stddev() const {
  if (count_ < 2) throw UsageError("running moments: need at least two samples for a deviation");
  return (m2_ / static_cast<double>(count_ - 1)).cwiseMax(0.0).cwiseSqrt();
}

PosteriorSummary summarize(const ChainRecord& record, const DifferentiableOp<double>& prior) {
  if (record.size() < 2) {
    throw UsageError("summarize: chain record holds " + std::to_string(record.size()) +
                     " samples; at least two are required");
  }
  if (record.latent_samples.cols() != prior.in_dim()) {
    throw ConfigError("summarize: latent dimension does not match prior input");
  }
  RunningMoments moments(prior.out_dim());
  for (Index t = 0; t < record.size(); ++t) {
    moments.add(prior.forward(record.latent_samples.row(t).transpose()));
  }
  return {moments.mean(), moments.stddev()};
}

LatentInit init_latent(const DifferentiableOp<double>& prior, const RealVector& s_init,
                       const LatentInitOptions& options) {
  if (s_init.size() != prior.out_dim()) {
    throw ConfigError("init_latent: image length " + std::to_string(s_init.size()) +
                      " does not match prior output " + std::to_string(prior.out_dim()));
  }
  if (!s_init.allFinite()) throw ConfigError("init_latent: initial image has non-finite entries");
  if (options.iters < 0 || options.restarts < 1 || !(options.step > 0.0)) {
    throw ConfigError("init_latent: iters >= 0, restarts >= 1 and step > 0 required");
  }

  const auto objective = [&](const RealVector& z) {
    const double f = (s_init - prior.forward(z)).squaredNorm();
    return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
  };

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  LatentInit best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < options.restarts; ++restart) {
    RealVector z(prior.in_dim());
    for (Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    double step = options.step;
    double f = objective(z);
    for (int it = 0; it < options.iters && std::isfinite(f); ++it) {
      auto lin = prior.linearize(z);
      const RealVector grad = -2.0 * lin.pullback(s_init - lin.value);
      if (!grad.allFinite()) break;
      bool improved = false;
      for (int bt = 0; bt < options.max_backtracks; ++bt) {
        RealVector trial = z - step * grad;
        const double f_trial = objective(trial);
        if (f_trial <= f) {
          z = std::move(trial);
          improved = f_trial < f;
          f = f_trial;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    if (f < best.objective) best = {z, f, restart};
  }
  if (!std::isfinite(best.objective)) {
    throw InitializationError("init_latent: every restart diverged; try a smaller step");
  }
  return best;
}

}  // namespace nlb
