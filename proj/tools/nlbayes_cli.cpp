// nlbayes: experiment runner for generative-prior reconstructions.
#include <CLI11.hpp>

#include <iostream>

#include "nlbayes/experiment.hpp"

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian image reconstruction with deep generative priors"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string output;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool verbose = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Draw a ground truth and simulate noisy measurements"},
      {"reconstruct", "Run the configured pipeline (MALA or baseline) on measurements"},
      {"init-latent", "Fit the latent initialization of the chain"},
      {"adjoint-test", "Check every operator's VJP against finite differences"},
      {"grid-search", "Sweep the baseline regularization weight against the ground truth"},
      {"model-info", "Describe an AGDP weight file"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--output", output, "Output directory (overrides config)");
    sub->add_option("--seed", seed, "Master seed (overrides config)");
    sub->add_option("--threads", threads, "Worker threads (overrides config)")->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", verbose, "Progress messages on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    nlb::ExperimentConfig cfg = nlb::load_experiment_config(config_path);
    if (seed) cfg.seed = *seed;
    if (threads > 0) cfg.threads = threads;
    nlb::CommandOptions opts{output, verbose, &std::cerr};

    nlb::CommandResult result;
    if (command == "simulate") {
      result = nlb::run_simulate(cfg, opts);
    } else if (command == "reconstruct") {
      result = nlb::run_reconstruct(cfg, opts);
    } else if (command == "init-latent") {
      result = nlb::run_init_latent(cfg, opts);
    } else if (command == "adjoint-test") {
      result = nlb::run_adjoint_test(cfg, opts);
    } else if (command == "grid-search") {
      result = nlb::run_grid_search(cfg, opts);
    } else {
      std::cout << nlb::run_model_info(cfg, opts);
      return kOk;
    }
    for (const auto& [key, value] : result.metrics) std::cout << key << "=" << value << "\n";
    return kOk;
  } catch (const nlb::ConfigError& e) {
    std::cerr << "nlbayes " << command << ": configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const nlb::UsageError& e) {
    std::cerr << "nlbayes " << command << ": usage error: " << e.what() << "\n";
    return kConfig;
  } catch (const nlb::NumericalError& e) {
    std::cerr << "nlbayes " << command << ": numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const nlb::IoError& e) {
    std::cerr << "nlbayes " << command << ": I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "nlbayes " << command << ": internal error: " << e.what() << "\n";
    return kInternal;
  }
}
