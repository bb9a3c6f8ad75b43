#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <variant>
#include <vector>

#include "nlbayes/operator.hpp"

namespace nlb {

/// Activation layout (channels, height, width); flat vectors are (n, 1, 1).
struct TensorShape {
  Index channels = 0;
  Index height = 1;
  Index width = 1;

  [[nodiscard]] Index size() const { return channels * height * width; }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

std::string to_string(const TensorShape& shape);

enum class LayerKind : std::uint8_t {
  kFullyConnected = 1,
  kConv2d = 2,
  kLeakyRelu = 3,
  kBatchNorm = 4,
  kSigmoid = 5,
  kUpsampleNearest = 6,
};

/// y = W x + b on the flattened input. weight is out x in.
struct FullyConnected {
  RealMatrix weight;
  RealVector bias;
};

/// Stride-1 2-D convolution with zero padding. weight is
/// out_channels x (in_channels * kernel * kernel), ordered (in, ky, kx).
struct Conv2d {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index padding = 0;
  RealMatrix weight;
  RealVector bias;
};

struct LeakyRelu {
  double slope = 0.2;
};

/// Inference-mode batch norm with frozen running statistics, per channel.
struct BatchNorm {
  RealVector gamma;
  RealVector beta;
  RealVector running_mean;
  RealVector running_var;
  double epsilon = 1e-5;
};

struct Sigmoid {};

struct UpsampleNearest {
  Index factor = 2;
};

using Layer = std::variant<FullyConnected, Conv2d, LeakyRelu, BatchNorm, Sigmoid, UpsampleNearest>;

LayerKind layer_kind(const Layer& layer);
std::string layer_name(LayerKind kind);

/// Output shape of `layer` on `input`; throws LoadError(kShapeChain) when the
/// layer cannot consume that shape.
TensorShape output_shape(const Layer& layer, const TensorShape& input);

/// Feed-forward generator network G: R^d -> R^K evaluated in double precision.
class GeneratorModel final : public DifferentiableOp<double> {
 public:
  GeneratorModel(TensorShape input, std::vector<Layer> layers);

  Index in_dim() const override { return input_.size(); }
  Index out_dim() const override { return shapes_.back().size(); }
  std::string name() const override { return "generator"; }

  RealVector forward(const RealVector& z) const override;
  RealVector vjp(const RealVector& z, const RealVector& r) const override;
  Linearization<double> linearize(const RealVector& z) const override;

  [[nodiscard]] Index latent_dim() const { return input_.size(); }
  [[nodiscard]] const TensorShape& input_shape() const { return input_; }
  [[nodiscard]] const TensorShape& output_shape() const { return shapes_.back(); }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] std::size_t parameter_count() const;

 private:
  void check_latent(const RealVector& z) const;

  TensorShape input_;
  std::vector<Layer> layers_;
  std::vector<TensorShape> shapes_;  // shapes_[i] is the input of layer i; back() is the output
};

/// Standard normal CDF via erfc. The rounding error of x / sqrt(2) is
/// removed to first order, which matters in the far tails.
inline double normal_cdf(double x) {
  constexpr double kInvSqrt2Hi = 0.7071067811865476;
  constexpr double kInvSqrt2Lo = -4.833646656726457e-17;
  const double a = -x * kInvSqrt2Hi;
  const double residual = std::fma(-x, kInvSqrt2Hi, -a) - x * kInvSqrt2Lo;
  const double slope = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-a * a);
  return 0.5 * (std::erfc(a) - residual * slope);
}

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// h(x) = cap * Phi(x): maps a standard normal z2 to a scale uniform on (0, cap).
inline double scaling_h(double x, double cap) { return cap * normal_cdf(x); }
inline double scaling_h_prime(double x, double cap) { return cap * normal_pdf(x); }

/// G_h(z) = h(z2) G(z1) with z = (z1, z2), z2 the last coordinate.
class AugmentedGenerator final : public DifferentiableOp<double> {
 public:
  AugmentedGenerator(std::shared_ptr<const DifferentiableOp<double>> base, double scale_cap);

  Index in_dim() const override { return base_->in_dim() + 1; }
  Index out_dim() const override { return base_->out_dim(); }
  std::string name() const override { return "augmented(" + base_->name() + ")"; }

  RealVector forward(const RealVector& z) const override;
  RealVector vjp(const RealVector& z, const RealVector& r) const override;
  Linearization<double> linearize(const RealVector& z) const override;

  [[nodiscard]] double scale_cap() const { return scale_cap_; }
  [[nodiscard]] const DifferentiableOp<double>& base() const { return *base_; }

 private:
  void check_latent(const RealVector& z) const;

  std::shared_ptr<const DifferentiableOp<double>> base_;
  double scale_cap_;
};

/// Builds generators with seeded random weights rounded to float precision,
/// so they survive a save/load cycle bit-exactly.
class GeneratorBuilder {
 public:
  GeneratorBuilder(TensorShape input, std::uint64_t seed);

  /// He-uniform weights scaled by `gain`; every bias entry set to `bias`.
  GeneratorBuilder& fully_connected(Index out, double gain = 1.0, double bias = 0.0);
  GeneratorBuilder& conv2d(Index out_channels, Index kernel, Index padding, double gain = 1.0);
  GeneratorBuilder& leaky_relu(double slope = 0.2);
  /// Random affine parameters and running statistics close to identity.
  GeneratorBuilder& batch_norm(double epsilon = 1e-5);
  GeneratorBuilder& sigmoid();
  GeneratorBuilder& upsample(Index factor = 2);

  [[nodiscard]] GeneratorModel build() const;

 private:
  double uniform(double bound);

  TensorShape input_;
  TensorShape current_;
  std::vector<Layer> layers_;
  std::mt19937_64 rng_;
};

}  // namespace nlb
