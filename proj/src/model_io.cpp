#include "nlbayes/model_io.hpp"

#include <array>
#include <cmath>

#include "binary_io.hpp"
#include "nlbayes/checksum.hpp"

namespace nlb {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'A', 'G', 'D', 'P'};

template <typename Derived>
void put_f32_array(detail::ByteWriter& w, const Eigen::DenseBase<Derived>& values) {
  // Row-major traversal regardless of the storage order of `values`.
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) w.put(static_cast<float>(values(i, j)));
  }
}

template <typename Reader>
RealVector get_f32_vector(Reader& r, Index n) {
  r.require(static_cast<std::size_t>(n) * sizeof(float));
  RealVector v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<double>(r.template get<float>());
  return v;
}

template <typename Reader>
RealMatrix get_f32_matrix(Reader& r, Index rows, Index cols) {
  r.require(static_cast<std::size_t>(rows * cols) * sizeof(float));
  RealMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(r.template get<float>());
  return m;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void put_layer(detail::ByteWriter& w, const Layer& layer) {
  w.put(static_cast<std::uint8_t>(layer_kind(layer)));
  std::visit(Overloaded{
                 [&](const FullyConnected& fc) {
                   w.put(static_cast<std::uint32_t>(fc.weight.cols()));
                   w.put(static_cast<std::uint32_t>(fc.weight.rows()));
                   put_f32_array(w, fc.weight);
                   put_f32_array(w, fc.bias);
                 },
                 [&](const Conv2d& c) {
                   w.put(static_cast<std::uint32_t>(c.in_channels));
                   w.put(static_cast<std::uint32_t>(c.out_channels));
                   w.put(static_cast<std::uint32_t>(c.kernel));
                   w.put(static_cast<std::uint32_t>(c.padding));
                   put_f32_array(w, c.weight);
                   put_f32_array(w, c.bias);
                 },
                 [&](const LeakyRelu& a) { w.put(a.slope); },
                 [&](const BatchNorm& bn) {
                   w.put(static_cast<std::uint32_t>(bn.gamma.size()));
                   w.put(bn.epsilon);
                   put_f32_array(w, bn.gamma);
                   put_f32_array(w, bn.beta);
                   put_f32_array(w, bn.running_mean);
                   put_f32_array(w, bn.running_var);
                 },
                 [](const Sigmoid&) {},
                 [&](const UpsampleNearest& up) { w.put(static_cast<std::uint32_t>(up.factor)); },
             },
             layer);
}

template <typename Reader>
Layer get_layer(Reader& r, std::uint32_t index) {
  const auto tag = r.template get<std::uint8_t>();
  const auto u32 = [&] { return static_cast<Index>(r.template get<std::uint32_t>()); };
  switch (static_cast<LayerKind>(tag)) {
    case LayerKind::kFullyConnected: {
      const Index in = u32();
      const Index out = u32();
      FullyConnected fc;
      fc.weight = get_f32_matrix(r, out, in);
      fc.bias = get_f32_vector(r, out);
      return fc;
    }
    case LayerKind::kConv2d: {
      Conv2d c;
      c.in_channels = u32();
      c.out_channels = u32();
      c.kernel = u32();
      c.padding = u32();
      c.weight = get_f32_matrix(r, c.out_channels, c.in_channels * c.kernel * c.kernel);
      c.bias = get_f32_vector(r, c.out_channels);
      return c;
    }
    case LayerKind::kLeakyRelu: return LeakyRelu{r.template get<double>()};
    case LayerKind::kBatchNorm: {
      const Index ch = u32();
      BatchNorm bn;
      bn.epsilon = r.template get<double>();
      bn.gamma = get_f32_vector(r, ch);
      bn.beta = get_f32_vector(r, ch);
      bn.running_mean = get_f32_vector(r, ch);
      bn.running_var = get_f32_vector(r, ch);
      return bn;
    }
    case LayerKind::kSigmoid: return Sigmoid{};
    case LayerKind::kUpsampleNearest: return UpsampleNearest{u32()};
  }
  throw LoadError(LoadError::Kind::kBadLayer, "AGDP: unknown layer kind tag " +
                                                  std::to_string(tag) + " at layer " +
                                                  std::to_string(index));
}

}  // namespace

OpPtr<double> LoadedModel::prior() const {
  if (scale_cap) return std::make_shared<AugmentedGenerator>(base, *scale_cap);
  return base;
}

std::vector<std::uint8_t> serialize_model(const GeneratorModel& model,
                                          std::optional<double> scale_cap) {
  detail::ByteWriter w;
  for (auto b : kMagic) w.put(b);
  w.put(kAgdpVersion);
  w.put(static_cast<std::uint32_t>(model.layers().size()));
  const auto& in = model.input_shape();
  w.put(static_cast<std::uint32_t>(in.channels));
  w.put(static_cast<std::uint32_t>(in.height));
  w.put(static_cast<std::uint32_t>(in.width));
  w.put(static_cast<std::uint8_t>(scale_cap ? 1 : 0));
  if (scale_cap) w.put(*scale_cap);
  for (const auto& layer : model.layers()) put_layer(w, layer);
  w.put(crc32(w.bytes()));
  return std::move(w.bytes());
}

LoadedModel parse_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw LoadError(LoadError::Kind::kBadMagic, "AGDP: bad magic bytes");
  }
  if (bytes.size() < 12) throw LoadError(LoadError::Kind::kChecksum, "AGDP: file too short for checksum");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, sizeof(version));
  if (version != kAgdpVersion) {
    throw LoadError(LoadError::Kind::kBadVersion,
                    "AGDP: unsupported version " + std::to_string(version));
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, sizeof(stored_crc));
  const auto body = bytes.first(bytes.size() - 4);
  if (crc32(body) != stored_crc) throw LoadError(LoadError::Kind::kChecksum, "AGDP: CRC-32 mismatch");

  const auto overrun = [] {
    throw LoadError(LoadError::Kind::kTruncated, "AGDP: unexpected end of layer data");
  };
  detail::ByteReader r(body.subspan(8), overrun);
  const auto layer_count = r.get<std::uint32_t>();
  TensorShape input;
  input.channels = r.get<std::uint32_t>();
  input.height = r.get<std::uint32_t>();
  input.width = r.get<std::uint32_t>();
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) throw LoadError(LoadError::Kind::kBadLayer, "AGDP: invalid augmented flag");
  std::optional<double> cap;
  if (flag == 1) {
    cap = r.get<double>();
    if (!(*cap > 0.0) || !std::isfinite(*cap)) {
      throw LoadError(LoadError::Kind::kBadLayer, "AGDP: scale cap must be positive");
    }
  }
  std::vector<Layer> layers;
  layers.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) layers.push_back(get_layer(r, i));
  if (r.remaining() != 0) {
    throw LoadError(LoadError::Kind::kTruncated, "AGDP: trailing bytes after last layer");
  }
  return {std::make_shared<const GeneratorModel>(input, std::move(layers)), cap};
}

void save_model(const GeneratorModel& model, std::optional<double> scale_cap,
                const std::filesystem::path& path) {
  const auto bytes = serialize_model(model, scale_cap);
  detail::write_file_atomic(path, bytes);
}

LoadedModel load_model(const std::filesystem::path& path) {
  return parse_model(detail::read_file(path));
}

}  // namespace nlb
