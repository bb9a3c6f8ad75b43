#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nlbayes/baselines.hpp"
#include "nlbayes/bpm.hpp"
#include "nlbayes/posterior.hpp"

namespace nlb {

enum class Modality { kPhaseRetrieval, kOdt };
enum class Pipeline { kMala, kBaseline };
enum class TruthSource { kNone, kFile, kDisc, kPrior };
enum class InitSource { kTikhonov, kBaseline, kZeros, kFile };
enum class BaselineSolver { kTikhonov, kTv };

/// Uniform ranges for the synthetic disc phantom, in pixels and contrast
/// units. The value is drawn from (value_lo, value_hi].
struct DiscSampler {
  double center_lo = 10.0;
  double center_hi = 115.0;
  double radius_lo = 4.0;
  double radius_hi = 25.0;
  double value_lo = 0.0;
  double value_hi = 0.2;
  int count = 1;
};

/// Seeds of the independent random streams. Unset entries derive from the
/// master seed.
struct SeedPlan {
  std::optional<std::uint64_t> matrix;
  std::optional<std::uint64_t> truth;
  std::optional<std::uint64_t> noise;
  std::optional<std::uint64_t> init;
  std::optional<std::uint64_t> chain;
};

/// One declarative experiment. Paths are absolute after parsing (relative
/// ones resolve against the config file directory).
struct ExperimentConfig {
  std::optional<Modality> modality;
  std::uint64_t seed = 0;
  SeedPlan seeds;
  int threads = 1;
  std::optional<ImageShape> image;

  // phase retrieval
  double matrix_variance = 2.0;
  double ratio = 0.15;

  // odt
  GridSpec grid;
  Index angles = 1;
  double theta = 0.0;
  SensorSpec sensor;

  NoiseKind noise = NoiseKind::kPoisson;
  double noise_variance = 0.0;  // Gaussian: per real entry (pr) or per complex entry (odt)

  TruthSource truth_source = TruthSource::kNone;
  std::filesystem::path truth_file;
  double truth_scale = 1.0;
  DiscSampler disc;

  std::filesystem::path weights;
  std::optional<double> scale_cap;  // overrides the cap stored in the weight file

  InitSource init_source = InitSource::kTikhonov;
  std::filesystem::path init_file;
  LatentInitOptions latent;

  SamplerConfig sampler;

  BaselineSolver baseline_solver = BaselineSolver::kTikhonov;
  VariationalConfig baseline;

  Pipeline pipeline = Pipeline::kMala;
  std::filesystem::path measurements;  // y for reconstruct; defaults to <output>/y.arr
  std::filesystem::path truth;         // reference image; defaults to <output>/truth.arr if present

  std::filesystem::path output;

  int adjoint_trials = 20;
  double adjoint_tolerance = 1e-5;

  [[nodiscard]] std::uint64_t matrix_seed() const;
  [[nodiscard]] std::uint64_t truth_seed() const;
  [[nodiscard]] std::uint64_t noise_seed() const;
  [[nodiscard]] std::uint64_t init_seed() const;
  [[nodiscard]] std::uint64_t chain_seed() const;

  /// Image shape implied by the modality (and checked against `image`).
  [[nodiscard]] ImageShape image_shape() const;
  /// Number of phase-retrieval measurements round(ratio * K), at least 1.
  [[nodiscard]] Index measurement_count() const;
};

/// Parses JSON text; unknown keys and wrong types raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Resolved configuration (explicit seeds, absolute paths) as canonical JSON.
/// Output directory and thread count are excluded: they do not affect results.
std::string config_snapshot(const ExperimentConfig& cfg);
std::uint32_t config_hash(const ExperimentConfig& cfg);

/// Deterministic stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Building blocks shared by the commands

/// Exclusive marker file inside an output directory, removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

  static constexpr const char* kFileName = ".nlbayes.lock";

 private:
  std::filesystem::path path_;
};

RealVector sample_disc_image(const ImageShape& shape, const DiscSampler& sampler, std::uint64_t seed);

/// Poisson draws per entry; a zero mean yields zero.
RealVector poisson_counts(const RealVector& mean, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::filesystem::path output;
  bool verbose = false;
  std::ostream* log = nullptr;  // progress messages when verbose
};

/// Each command writes its artifacts, metrics.txt and manifest.json into the
/// output directory and returns the key=value metrics it recorded.
struct CommandResult {
  std::vector<std::pair<std::string, std::string>> metrics;

  [[nodiscard]] std::optional<std::string> metric(const std::string& key) const;
};

CommandResult run_simulate(const ExperimentConfig& cfg, const CommandOptions& opts);
CommandResult run_reconstruct(const ExperimentConfig& cfg, const CommandOptions& opts);
CommandResult run_init_latent(const ExperimentConfig& cfg, const CommandOptions& opts);
CommandResult run_grid_search(const ExperimentConfig& cfg, const CommandOptions& opts);
/// Throws NumericalError after writing its report when any defect exceeds the tolerance.
CommandResult run_adjoint_test(const ExperimentConfig& cfg, const CommandOptions& opts);
/// Human-readable weight-file summary; also written to the output directory when one is given.
std::string run_model_info(const ExperimentConfig& cfg, const CommandOptions& opts);

}  // namespace nlb
