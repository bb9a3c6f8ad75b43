#include <json.hpp>

#include <set>

#include "nlbayes/array_io.hpp"
#include "nlbayes/checksum.hpp"
#include "nlbayes/experiment.hpp"

namespace nlb {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::optional<double> number(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) fail(key, "a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) fail(key, "a finite number");
    return d;
  }

  std::optional<std::int64_t> integer(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) fail(key, "an integer");
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> unsigned_integer(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return v->get<std::uint64_t>();
    fail(key, "a non-negative integer");
  }

  std::optional<bool> boolean(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) fail(key, "true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail(key, "a string");
    return v->get<std::string>();
  }

  std::optional<std::vector<double>> numbers(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_array()) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) fail(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::optional<std::pair<double, double>> range(const std::string& key) {
    auto v = numbers(key);
    if (!v) return std::nullopt;
    if (v->size() != 2 || (*v)[0] > (*v)[1]) fail(key, "a [low, high] pair");
    return std::pair{(*v)[0], (*v)[1]};
  }

  std::optional<Fields> object(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return Fields(*v, where_.empty() ? key : where_ + "." + key);
  }

  template <typename Enum>
  std::optional<Enum> choice(const std::string& key,
                             std::initializer_list<std::pair<const char*, Enum>> options) {
    auto s = string(key);
    if (!s) return std::nullopt;
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (*s == name) return value;
      allowed += allowed.empty() ? name : std::string(", ") + name;
    }
    throw ConfigError("config: '" + path(key) + "' must be one of " + allowed + " (got '" + *s + "')");
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + path(key) + "'");
    }
  }

 private:
  [[nodiscard]] std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config: '" + path(key) + "' must be " + what);
  }

  const json& node_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename T>
void assign(std::optional<T> value, T& target) {
  if (value) target = *value;
}

int to_int(std::optional<std::int64_t> v, int fallback, const char* key) {
  if (!v) return fallback;
  if (*v < std::numeric_limits<int>::min() || *v > std::numeric_limits<int>::max()) {
    throw ConfigError(std::string("config: '") + key + "' is out of range");
  }
  return static_cast<int>(*v);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path raw(p);
  return (raw.is_absolute() ? raw : base / raw).lexically_normal();
}

std::string modality_name(Modality m) { return m == Modality::kOdt ? "odt" : "phase_retrieval"; }

std::string truth_name(TruthSource s) {
  switch (s) {
    case TruthSource::kFile: return "file";
    case TruthSource::kDisc: return "disc";
    case TruthSource::kPrior: return "prior";
    case TruthSource::kNone: break;
  }
  return "none";
}

std::string init_name(InitSource s) {
  switch (s) {
    case InitSource::kBaseline: return "baseline";
    case InitSource::kZeros: return "zeros";
    case InitSource::kFile: return "file";
    case InitSource::kTikhonov: break;
  }
  return "tikhonov";
}

ordered_json path_json(const fs::path& p) { return p.empty() ? ordered_json(nullptr) : ordered_json(p.string()); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key.
  std::uint64_t x = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t ExperimentConfig::matrix_seed() const { return seeds.matrix.value_or(derive_seed(seed, 0)); }
std::uint64_t ExperimentConfig::truth_seed() const { return seeds.truth.value_or(derive_seed(seed, 1)); }
std::uint64_t ExperimentConfig::noise_seed() const { return seeds.noise.value_or(derive_seed(seed, 2)); }
std::uint64_t ExperimentConfig::init_seed() const { return seeds.init.value_or(derive_seed(seed, 3)); }
std::uint64_t ExperimentConfig::chain_seed() const { return seeds.chain.value_or(derive_seed(seed, 4)); }

ImageShape ExperimentConfig::image_shape() const {
  if (!modality) throw ConfigError("config: 'modality' is required");
  if (*modality == Modality::kOdt) {
    const ImageShape implied{grid.nz, grid.nx};
    if (image && !(*image == implied)) {
      throw ConfigError("config: 'image' must be nz x nx = " + std::to_string(grid.nz) + " x " +
                        std::to_string(grid.nx) + " for odt");
    }
    return implied;
  }
  if (!image) throw ConfigError("config: 'image' is required for phase_retrieval");
  return *image;
}

Index ExperimentConfig::measurement_count() const {
  const double k = static_cast<double>(image_shape().size());
  return std::max<Index>(1, static_cast<Index>(std::llround(ratio * k)));
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Fields top(root, "");

  cfg.modality = top.choice<Modality>("modality", {{"phase_retrieval", Modality::kPhaseRetrieval},
                                                   {"odt", Modality::kOdt}});
  assign(top.unsigned_integer("seed"), cfg.seed);
  cfg.threads = to_int(top.integer("threads"), 1, "threads");
  if (auto s = top.object("seeds")) {
    cfg.seeds.matrix = s->unsigned_integer("matrix");
    cfg.seeds.truth = s->unsigned_integer("truth");
    cfg.seeds.noise = s->unsigned_integer("noise");
    cfg.seeds.init = s->unsigned_integer("init");
    cfg.seeds.chain = s->unsigned_integer("chain");
    s->finish();
  }
  if (auto s = top.object("image")) {
    ImageShape shape;
    assign<Index>(s->integer("height"), shape.height);
    assign<Index>(s->integer("width"), shape.width);
    s->finish();
    if (shape.height < 1 || shape.width < 1) throw ConfigError("config: image height and width must be positive");
    cfg.image = shape;
  }
  if (auto s = top.object("phase_retrieval")) {
    assign(s->number("variance"), cfg.matrix_variance);
    assign(s->number("ratio"), cfg.ratio);
    s->finish();
  }
  if (auto s = top.object("odt")) {
    assign<Index>(s->integer("nx"), cfg.grid.nx);
    assign<Index>(s->integer("nz"), cfg.grid.nz);
    assign(s->number("dx"), cfg.grid.dx);
    assign(s->number("dz"), cfg.grid.dz);
    assign(s->number("n_b"), cfg.grid.n_b);
    assign(s->number("lambda0"), cfg.grid.lambda0);
    assign<Index>(s->integer("angles"), cfg.angles);
    assign(s->number("theta"), cfg.theta);
    if (auto sensor = s->object("sensor")) {
      assign(sensor->number("distance"), cfg.sensor.distance);
      assign<Index>(sensor->integer("padding"), cfg.sensor.padding);
      sensor->finish();
    }
    s->finish();
  }
  if (auto s = top.object("noise")) {
    assign(s->choice<NoiseKind>("kind", {{"poisson", NoiseKind::kPoisson}, {"gaussian", NoiseKind::kGaussian}}),
           cfg.noise);
    assign(s->number("variance"), cfg.noise_variance);
    s->finish();
  }
  if (auto s = top.object("ground_truth")) {
    assign(s->choice<TruthSource>("source", {{"none", TruthSource::kNone},
                                             {"file", TruthSource::kFile},
                                             {"disc", TruthSource::kDisc},
                                             {"prior", TruthSource::kPrior}}),
           cfg.truth_source);
    if (auto p = s->string("path")) cfg.truth_file = resolve(base_dir, *p);
    assign(s->number("scale"), cfg.truth_scale);
    if (auto d = s->object("disc")) {
      if (auto r = d->range("center")) std::tie(cfg.disc.center_lo, cfg.disc.center_hi) = *r;
      if (auto r = d->range("radius")) std::tie(cfg.disc.radius_lo, cfg.disc.radius_hi) = *r;
      if (auto r = d->range("value")) std::tie(cfg.disc.value_lo, cfg.disc.value_hi) = *r;
      cfg.disc.count = to_int(d->integer("count"), cfg.disc.count, "ground_truth.disc.count");
      d->finish();
    }
    s->finish();
  }
  if (auto s = top.object("prior")) {
    if (auto p = s->string("weights")) cfg.weights = resolve(base_dir, *p);
    cfg.scale_cap = s->number("scale_cap");
    s->finish();
  }
  if (auto s = top.object("init")) {
    assign(s->choice<InitSource>("source", {{"tikhonov", InitSource::kTikhonov},
                                            {"baseline", InitSource::kBaseline},
                                            {"zeros", InitSource::kZeros},
                                            {"file", InitSource::kFile}}),
           cfg.init_source);
    if (auto p = s->string("path")) cfg.init_file = resolve(base_dir, *p);
    cfg.latent.iters = to_int(s->integer("iters"), cfg.latent.iters, "init.iters");
    assign(s->number("step"), cfg.latent.step);
    cfg.latent.restarts = to_int(s->integer("restarts"), cfg.latent.restarts, "init.restarts");
    cfg.latent.max_backtracks = to_int(s->integer("max_backtracks"), cfg.latent.max_backtracks, "init.max_backtracks");
    s->finish();
  }
  if (auto s = top.object("sampler")) {
    assign(s->number("step"), cfg.sampler.step);
    assign(s->integer("burn_in"), cfg.sampler.burn_in);
    assign(s->integer("samples"), cfg.sampler.samples);
    assign(s->integer("thin"), cfg.sampler.thin);
    s->finish();
  }
  if (auto s = top.object("baseline")) {
    assign(s->choice<BaselineSolver>("solver", {{"tikhonov", BaselineSolver::kTikhonov}, {"tv", BaselineSolver::kTv}}),
           cfg.baseline_solver);
    assign(s->number("tau_reg"), cfg.baseline.tau_reg);
    assign(s->numbers("grid"), cfg.baseline.grid);
    cfg.baseline.max_iters = to_int(s->integer("max_iters"), cfg.baseline.max_iters, "baseline.max_iters");
    assign(s->number("step"), cfg.baseline.step);
    assign(s->number("tol"), cfg.baseline.tol);
    cfg.baseline.inner_iters = to_int(s->integer("inner_iters"), cfg.baseline.inner_iters, "baseline.inner_iters");
    assign(s->boolean("momentum"), cfg.baseline.momentum);
    cfg.baseline.max_backtracks =
        to_int(s->integer("max_backtracks"), cfg.baseline.max_backtracks, "baseline.max_backtracks");
    s->finish();
  }
  assign(top.choice<Pipeline>("pipeline", {{"mala", Pipeline::kMala}, {"baseline", Pipeline::kBaseline}}),
         cfg.pipeline);
  if (auto p = top.string("measurements")) cfg.measurements = resolve(base_dir, *p);
  if (auto p = top.string("truth")) cfg.truth = resolve(base_dir, *p);
  if (auto p = top.string("output")) cfg.output = resolve(base_dir, *p);
  if (auto s = top.object("adjoint_test")) {
    cfg.adjoint_trials = to_int(s->integer("trials"), cfg.adjoint_trials, "adjoint_test.trials");
    assign(s->number("tolerance"), cfg.adjoint_tolerance);
    s->finish();
  }
  top.finish();

  // Field-level checks that do not depend on the command.
  if (cfg.threads < 1) throw ConfigError("config: 'threads' must be >= 1");
  if (!(cfg.matrix_variance > 0.0)) throw ConfigError("config: 'phase_retrieval.variance' must be > 0");
  if (!(cfg.ratio > 0.0)) throw ConfigError("config: 'phase_retrieval.ratio' must be > 0");
  if (cfg.noise_variance < 0.0) throw ConfigError("config: 'noise.variance' must be >= 0");
  if (cfg.noise == NoiseKind::kGaussian && !(cfg.noise_variance > 0.0)) {
    throw ConfigError("config: gaussian noise needs 'noise.variance' > 0");
  }
  if (cfg.scale_cap && !(*cfg.scale_cap > 0.0)) throw ConfigError("config: 'prior.scale_cap' must be > 0");
  if (cfg.disc.count < 1 || cfg.disc.radius_lo < 0.0) throw ConfigError("config: invalid disc sampler ranges");
  if (cfg.modality == Modality::kOdt) {
    cfg.grid.validate();
    cfg.sensor.validate();
    if (cfg.angles < 1) throw ConfigError("config: 'odt.angles' must be >= 1");
    if (cfg.noise == NoiseKind::kPoisson) {
      throw ConfigError("config: odt measurements are complex; use gaussian noise");
    }
  }
  cfg.baseline.validate();
  if (cfg.adjoint_trials < 1 || !(cfg.adjoint_tolerance > 0.0)) {
    throw ConfigError("config: adjoint_test needs trials >= 1 and tolerance > 0");
  }
  {
    SamplerConfig check = cfg.sampler;
    check.validate();
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config: cannot open '" + path.string() + "'");
  return parse_experiment_config(read_text(path), fs::absolute(path).parent_path());
}

std::string config_snapshot(const ExperimentConfig& cfg) {
  ordered_json j;
  j["modality"] = cfg.modality ? ordered_json(modality_name(*cfg.modality)) : ordered_json(nullptr);
  j["seed"] = cfg.seed;
  j["seeds"] = {{"matrix", cfg.matrix_seed()},
                {"truth", cfg.truth_seed()},
                {"noise", cfg.noise_seed()},
                {"init", cfg.init_seed()},
                {"chain", cfg.chain_seed()}};
  if (cfg.image) {
    j["image"] = {{"height", cfg.image->height}, {"width", cfg.image->width}};
  } else {
    j["image"] = nullptr;
  }
  j["phase_retrieval"] = {{"variance", cfg.matrix_variance}, {"ratio", cfg.ratio}};
  j["odt"] = {{"nx", cfg.grid.nx},
              {"nz", cfg.grid.nz},
              {"dx", cfg.grid.dx},
              {"dz", cfg.grid.dz},
              {"n_b", cfg.grid.n_b},
              {"lambda0", cfg.grid.lambda0},
              {"angles", cfg.angles},
              {"theta", cfg.theta},
              {"sensor", {{"distance", cfg.sensor.distance}, {"padding", cfg.sensor.padding}}}};
  j["noise"] = {{"kind", to_string(cfg.noise)}, {"variance", cfg.noise_variance}};
  j["ground_truth"] = {{"source", truth_name(cfg.truth_source)},
                       {"path", path_json(cfg.truth_file)},
                       {"scale", cfg.truth_scale},
                       {"disc",
                        {{"center", {cfg.disc.center_lo, cfg.disc.center_hi}},
                         {"radius", {cfg.disc.radius_lo, cfg.disc.radius_hi}},
                         {"value", {cfg.disc.value_lo, cfg.disc.value_hi}},
                         {"count", cfg.disc.count}}}};
  j["prior"] = {{"weights", path_json(cfg.weights)},
                {"scale_cap", cfg.scale_cap ? ordered_json(*cfg.scale_cap) : ordered_json(nullptr)}};
  j["init"] = {{"source", init_name(cfg.init_source)},
               {"path", path_json(cfg.init_file)},
               {"iters", cfg.latent.iters},
               {"step", cfg.latent.step},
               {"restarts", cfg.latent.restarts},
               {"max_backtracks", cfg.latent.max_backtracks}};
  j["sampler"] = {{"step", cfg.sampler.step},
                  {"burn_in", cfg.sampler.burn_in},
                  {"samples", cfg.sampler.samples},
                  {"thin", cfg.sampler.thin}};
  j["baseline"] = {{"solver", cfg.baseline_solver == BaselineSolver::kTv ? "tv" : "tikhonov"},
                   {"tau_reg", cfg.baseline.tau_reg},
                   {"grid", cfg.baseline.grid},
                   {"max_iters", cfg.baseline.max_iters},
                   {"step", cfg.baseline.step},
                   {"tol", cfg.baseline.tol},
                   {"inner_iters", cfg.baseline.inner_iters},
                   {"momentum", cfg.baseline.momentum},
                   {"max_backtracks", cfg.baseline.max_backtracks}};
  j["pipeline"] = cfg.pipeline == Pipeline::kBaseline ? "baseline" : "mala";
  j["measurements"] = path_json(cfg.measurements);
  j["truth"] = path_json(cfg.truth);
  j["adjoint_test"] = {{"trials", cfg.adjoint_trials}, {"tolerance", cfg.adjoint_tolerance}};
  return j.dump(2) + "\n";
}

std::uint32_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_snapshot(cfg);
  return crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace nlb
