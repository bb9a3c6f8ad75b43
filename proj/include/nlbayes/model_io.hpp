#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "nlbayes/generator.hpp"

namespace nlb {

inline constexpr std::uint32_t kAgdpVersion = 1;

/// Contents of an AGDP weight file: the base network and, for augmented
/// priors, the scale cap of h.
struct LoadedModel {
  std::shared_ptr<const GeneratorModel> base;
  std::optional<double> scale_cap;

  [[nodiscard]] bool augmented() const { return scale_cap.has_value(); }

  /// G_h when the file is augmented, G otherwise.
  [[nodiscard]] OpPtr<double> prior() const;
};

/// Weights are narrowed to float32; models built from float-representable
/// values (e.g. by GeneratorBuilder) round-trip bit-exactly.
std::vector<std::uint8_t> serialize_model(const GeneratorModel& model,
                                          std::optional<double> scale_cap = std::nullopt);

LoadedModel parse_model(std::span<const std::uint8_t> bytes);

void save_model(const GeneratorModel& model, std::optional<double> scale_cap,
                const std::filesystem::path& path);

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace nlb
