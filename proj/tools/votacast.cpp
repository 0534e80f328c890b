#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "votacast/pipeline.hpp"

namespace vp = votacast::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"votacast: election forecasts from surveys, polls and seat allocation"};
  app.require_subcommand(1, 1);
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  const std::map<std::string, std::string> about{
      {"fit-fundamental", "sample the survey model and write fundamental_draws.csv"},
      {"fit-polls", "sample the poll house-effects model and write polls_draws.csv"},
      {"synthesize", "simulate local results and weight them by the current polls"},
      {"allocate", "turn the weighted simulations into seat distributions"},
      {"benchmark", "fit the regression baselines on the history table"},
      {"report", "assemble comparison tables and charts under report/"}};
  for (const auto& name : vp::stage_names()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out, "override the output directory");
    sub->add_flag("-q,--quiet", quiet, "do not print warnings");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = vp::load_config(config, seed, out);
    const auto result = vp::run_stage(cfg, stage);
    if (!quiet)
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& f : result.written) std::cout << f << "\n";
    if (result.diagnostic_failure) {
      std::cerr << "votacast " << stage << ": diagnostic failure: " << result.diagnostic << "\n";
      return 3;
    }
    return 0;
  } catch (const votacast::Error& e) {
    std::cerr << "votacast " << stage << ": " << e.what() << "\n";
    return vp::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "votacast " << stage << ": internal error: " << e.what() << "\n";
    return 1;
  }
}
