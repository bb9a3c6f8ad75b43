#include "nlbayes/generator.hpp"

#include <cmath>

namespace nlb {

std::string to_string(const TensorShape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void chain_error(const std::string& what) {
  throw LoadError(LoadError::Kind::kShapeChain, "shape chain: " + what);
}

// Column matrix of the zero-padded input: row (c, ky, kx), column (oy, ox).
RealMatrix im2col(const RealVector& x, const TensorShape& in, const Conv2d& conv,
                  const TensorShape& out) {
  const Index k = conv.kernel;
  RealMatrix cols = RealMatrix::Zero(in.channels * k * k, out.height * out.width);
  for (Index c = 0; c < in.channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < out.height; ++oy) {
          const Index iy = oy + ky - conv.padding;
          if (iy < 0 || iy >= in.height) continue;
          for (Index ox = 0; ox < out.width; ++ox) {
            const Index ix = ox + kx - conv.padding;
            if (ix < 0 || ix >= in.width) continue;
            cols(row, oy * out.width + ox) = x[(c * in.height + iy) * in.width + ix];
          }
        }
      }
    }
  }
  return cols;
}

RealVector col2im(const RealMatrix& cols, const TensorShape& in, const Conv2d& conv,
                  const TensorShape& out) {
  const Index k = conv.kernel;
  RealVector x = RealVector::Zero(in.size());
  for (Index c = 0; c < in.channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < out.height; ++oy) {
          const Index iy = oy + ky - conv.padding;
          if (iy < 0 || iy >= in.height) continue;
          for (Index ox = 0; ox < out.width; ++ox) {
            const Index ix = ox + kx - conv.padding;
            if (ix < 0 || ix >= in.width) continue;
            x[(c * in.height + iy) * in.width + ix] += cols(row, oy * out.width + ox);
          }
        }
      }
    }
  }
  return x;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

RealVector layer_forward(const Layer& layer, const RealVector& x, const TensorShape& in,
                         const TensorShape& out) {
  return std::visit(
      Overloaded{
          [&](const FullyConnected& fc) -> RealVector { return fc.weight * x + fc.bias; },
          [&](const Conv2d& conv) -> RealVector {
            const RealMatrix cols = im2col(x, in, conv, out);
            RealMatrix y = conv.weight * cols;
            y.colwise() += conv.bias;
            return Eigen::Map<const RealVector>(y.data(), y.size());
          },
          [&](const LeakyRelu& act) -> RealVector {
            return x.unaryExpr([s = act.slope](double v) { return v > 0.0 ? v : s * v; });
          },
          [&](const BatchNorm& bn) -> RealVector {
            RealVector y(x.size());
            const Index plane = in.height * in.width;
            for (Index c = 0; c < in.channels; ++c) {
              const double scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.epsilon);
              const double shift = bn.beta[c] - scale * bn.running_mean[c];
              y.segment(c * plane, plane) = (scale * x.segment(c * plane, plane)).array() + shift;
            }
            return y;
          },
          [&](const Sigmoid&) -> RealVector { return x.unaryExpr(&sigmoid); },
          [&](const UpsampleNearest& up) -> RealVector {
            RealVector y(out.size());
            for (Index c = 0; c < out.channels; ++c) {
              for (Index oy = 0; oy < out.height; ++oy) {
                for (Index ox = 0; ox < out.width; ++ox) {
                  y[(c * out.height + oy) * out.width + ox] =
                      x[(c * in.height + oy / up.factor) * in.width + ox / up.factor];
                }
              }
            }
            return y;
          },
      },
      layer);
}

// Gradient with respect to the layer input given its input x, output y and
// the output cotangent g.
RealVector layer_backward(const Layer& layer, const RealVector& x, const RealVector& y,
                          const RealVector& g, const TensorShape& in, const TensorShape& out) {
  return std::visit(
      Overloaded{
          [&](const FullyConnected& fc) -> RealVector { return fc.weight.transpose() * g; },
          [&](const Conv2d& conv) -> RealVector {
            const Eigen::Map<const RealMatrix> g_mat(g.data(), conv.out_channels,
                                                     out.height * out.width);
            const RealMatrix g_cols = conv.weight.transpose() * g_mat;
            return col2im(g_cols, in, conv, out);
          },
          [&](const LeakyRelu& act) -> RealVector {
            // Subgradient at exactly zero is the negative slope.
            return g.binaryExpr(x, [s = act.slope](double gi, double xi) {
              return xi > 0.0 ? gi : s * gi;
            });
          },
          [&](const BatchNorm& bn) -> RealVector {
            RealVector dx(g.size());
            const Index plane = in.height * in.width;
            for (Index c = 0; c < in.channels; ++c) {
              const double scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.epsilon);
              dx.segment(c * plane, plane) = scale * g.segment(c * plane, plane);
            }
            return dx;
          },
          [&](const Sigmoid&) -> RealVector {
            return g.array() * y.array() * (1.0 - y.array());
          },
          [&](const UpsampleNearest& up) -> RealVector {
            RealVector dx = RealVector::Zero(in.size());
            for (Index c = 0; c < out.channels; ++c) {
              for (Index oy = 0; oy < out.height; ++oy) {
                for (Index ox = 0; ox < out.width; ++ox) {
                  dx[(c * in.height + oy / up.factor) * in.width + ox / up.factor] +=
                      g[(c * out.height + oy) * out.width + ox];
                }
              }
            }
            return dx;
          },
      },
      layer);
}

}  // namespace

LayerKind layer_kind(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const FullyConnected&) { return LayerKind::kFullyConnected; },
                        [](const Conv2d&) { return LayerKind::kConv2d; },
                        [](const LeakyRelu&) { return LayerKind::kLeakyRelu; },
                        [](const BatchNorm&) { return LayerKind::kBatchNorm; },
                        [](const Sigmoid&) { return LayerKind::kSigmoid; },
                        [](const UpsampleNearest&) { return LayerKind::kUpsampleNearest; },
                    },
                    layer);
}

std::string layer_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kFullyConnected: return "fully_connected";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLeakyRelu: return "leaky_relu";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kUpsampleNearest: return "upsample_nearest";
  }
  return "unknown";
}

TensorShape output_shape(const Layer& layer, const TensorShape& in) {
  return std::visit(
      Overloaded{
          [&](const FullyConnected& fc) -> TensorShape {
            if (fc.weight.cols() != in.size()) {
              chain_error("fully_connected expects " + std::to_string(fc.weight.cols()) +
                          " inputs but receives " + to_string(in));
            }
            if (fc.bias.size() != fc.weight.rows()) chain_error("fully_connected bias length");
            return {fc.weight.rows(), 1, 1};
          },
          [&](const Conv2d& conv) -> TensorShape {
            if (conv.in_channels != in.channels) {
              chain_error("conv2d expects " + std::to_string(conv.in_channels) +
                          " channels but receives " + to_string(in));
            }
            if (conv.kernel < 1 || conv.padding < 0) chain_error("conv2d kernel/padding");
            if (conv.weight.rows() != conv.out_channels ||
                conv.weight.cols() != conv.in_channels * conv.kernel * conv.kernel ||
                conv.bias.size() != conv.out_channels) {
              chain_error("conv2d weight dimensions");
            }
            const Index h = in.height + 2 * conv.padding - conv.kernel + 1;
            const Index w = in.width + 2 * conv.padding - conv.kernel + 1;
            if (h < 1 || w < 1) chain_error("conv2d output would be empty on " + to_string(in));
            return {conv.out_channels, h, w};
          },
          [&](const LeakyRelu&) { return in; },
          [&](const BatchNorm& bn) -> TensorShape {
            if (bn.gamma.size() != in.channels || bn.beta.size() != in.channels ||
                bn.running_mean.size() != in.channels || bn.running_var.size() != in.channels) {
              chain_error("batch_norm channel count does not match " + to_string(in));
            }
            if (!((bn.running_var.array() + bn.epsilon) > 0.0).all()) {
              chain_error("batch_norm variance plus epsilon must be positive");
            }
            return in;
          },
          [&](const Sigmoid&) { return in; },
          [&](const UpsampleNearest& up) -> TensorShape {
            if (up.factor != 2) chain_error("upsample_nearest supports factor 2 only");
            return {in.channels, in.height * up.factor, in.width * up.factor};
          },
      },
      layer);
}

GeneratorModel::GeneratorModel(TensorShape input, std::vector<Layer> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.size() < 1) chain_error("empty input shape");
  if (layers_.empty()) chain_error("model has no layers");
  shapes_.reserve(layers_.size() + 1);
  shapes_.push_back(input_);
  for (const auto& layer : layers_) shapes_.push_back(nlb::output_shape(layer, shapes_.back()));
}

std::size_t GeneratorModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](const FullyConnected& fc) {
                     total += static_cast<std::size_t>(fc.weight.size() + fc.bias.size());
                   },
                   [&](const Conv2d& c) {
                     total += static_cast<std::size_t>(c.weight.size() + c.bias.size());
                   },
                   [&](const BatchNorm& bn) { total += static_cast<std::size_t>(4 * bn.gamma.size()); },
                   [](const auto&) {},
               },
               layer);
  }
  return total;
}

void GeneratorModel::check_latent(const RealVector& z) const {
  if (z.size() != latent_dim()) {
    throw ConfigError("generator: latent length " + std::to_string(z.size()) + " != " +
                      std::to_string(latent_dim()));
  }
}

RealVector GeneratorModel::forward(const RealVector& z) const {
  check_latent(z);
  RealVector x = z;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layer_forward(layers_[i], x, shapes_[i], shapes_[i + 1]);
  }
  return x;
}

RealVector GeneratorModel::vjp(const RealVector& z, const RealVector& r) const {
  return linearize(z).pullback(r);
}

Linearization<double> GeneratorModel::linearize(const RealVector& z) const {
  check_latent(z);
  std::vector<RealVector> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(z);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    acts.push_back(layer_forward(layers_[i], acts.back(), shapes_[i], shapes_[i + 1]));
  }
  RealVector value = acts.back();
  return {std::move(value), [this, acts = std::move(acts)](const RealVector& r) {
            if (r.size() != out_dim()) {
              throw ConfigError("generator: cotangent length " + std::to_string(r.size()) +
                                " != " + std::to_string(out_dim()));
            }
            RealVector g = r;
            for (std::size_t i = layers_.size(); i-- > 0;) {
              g = layer_backward(layers_[i], acts[i], acts[i + 1], g, shapes_[i], shapes_[i + 1]);
            }
            return g;
          }};
}

AugmentedGenerator::AugmentedGenerator(std::shared_ptr<const DifferentiableOp<double>> base,
                                       double scale_cap)
    : base_(std::move(base)), scale_cap_(scale_cap) {
  if (!base_) throw ConfigError("augmented generator: null base model");
  if (!(scale_cap_ > 0.0) || !std::isfinite(scale_cap_)) {
    throw ConfigError("augmented generator: scale cap must be positive");
  }
}

void AugmentedGenerator::check_latent(const RealVector& z) const {
  if (z.size() != in_dim()) {
    throw ConfigError("augmented generator: latent length " + std::to_string(z.size()) + " != " +
                      std::to_string(in_dim()));
  }
}

RealVector AugmentedGenerator::forward(const RealVector& z) const {
  check_latent(z);
  const Index d = base_->in_dim();
  return scaling_h(z[d], scale_cap_) * base_->forward(z.head(d));
}

RealVector AugmentedGenerator::vjp(const RealVector& z, const RealVector& r) const {
  return linearize(z).pullback(r);
}

Linearization<double> AugmentedGenerator::linearize(const RealVector& z) const {
  check_latent(z);
  const Index d = base_->in_dim();
  const double z2 = z[d];
  const double h = scaling_h(z2, scale_cap_);
  const double dh = scaling_h_prime(z2, scale_cap_);
  auto inner = base_->linearize(z.head(d));
  RealVector value = h * inner.value;
  return {std::move(value),
          [d, h, dh, image = std::move(inner.value), pull = std::move(inner.pullback)](
              const RealVector& r) {
            RealVector g(d + 1);
            g.head(d) = h * pull(r);
            g[d] = dh * image.dot(r);
            return g;
          }};
}

GeneratorBuilder::GeneratorBuilder(TensorShape input, std::uint64_t seed)
    : input_(input), current_(input), rng_(seed) {}

double GeneratorBuilder::uniform(double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  return static_cast<double>(static_cast<float>(dist(rng_)));
}

GeneratorBuilder& GeneratorBuilder::fully_connected(Index out, double gain, double bias) {
  const Index in = current_.size();
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in));
  FullyConnected fc{RealMatrix(out, in), RealVector::Constant(out, static_cast<float>(bias))};
  for (Index i = 0; i < fc.weight.size(); ++i) fc.weight.data()[i] = uniform(bound);
  current_ = nlb::output_shape(fc, current_);
  layers_.emplace_back(std::move(fc));
  return *this;
}

GeneratorBuilder& GeneratorBuilder::conv2d(Index out_channels, Index kernel, Index padding,
                                           double gain) {
  const Index fan_in = current_.channels * kernel * kernel;
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  Conv2d conv{current_.channels, out_channels, kernel, padding, RealMatrix(out_channels, fan_in),
              RealVector::Zero(out_channels)};
  for (Index i = 0; i < conv.weight.size(); ++i) conv.weight.data()[i] = uniform(bound);
  for (Index i = 0; i < conv.bias.size(); ++i) conv.bias[i] = uniform(0.1);
  current_ = nlb::output_shape(conv, current_);
  layers_.emplace_back(std::move(conv));
  return *this;
}

GeneratorBuilder& GeneratorBuilder::leaky_relu(double slope) {
  layers_.emplace_back(LeakyRelu{slope});
  return *this;
}

GeneratorBuilder& GeneratorBuilder::batch_norm(double epsilon) {
  const Index c = current_.channels;
  BatchNorm bn{RealVector(c), RealVector(c), RealVector(c), RealVector(c), epsilon};
  for (Index i = 0; i < c; ++i) {
    bn.gamma[i] = static_cast<float>(1.0 + uniform(0.1));
    bn.beta[i] = uniform(0.1);
    bn.running_mean[i] = uniform(0.1);
    bn.running_var[i] = static_cast<float>(1.0 + uniform(0.2));
  }
  current_ = nlb::output_shape(bn, current_);
  layers_.emplace_back(std::move(bn));
  return *this;
}

GeneratorBuilder& GeneratorBuilder::sigmoid() {
  layers_.emplace_back(Sigmoid{});
  return *this;
}

GeneratorBuilder& GeneratorBuilder::upsample(Index factor) {
  UpsampleNearest up{factor};
  current_ = nlb::output_shape(up, current_);
  layers_.emplace_back(up);
  return *this;
}

GeneratorModel GeneratorBuilder::build() const { return GeneratorModel(input_, layers_); }

}  // namespace nlb
