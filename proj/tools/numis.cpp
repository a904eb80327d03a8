#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "numis/errors.hpp"
#include "numis/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int report_failure(const char* kind, const std::exception& e, int code) {
  std::cerr << "numis: " << kind << ": " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coin-concept pipeline: segmentation, weak labels, ViT/CNN training, saliency"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::vector<std::string> commands = numis::stage_names();
  commands.push_back("all");
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name, name == "all" ? "Run every stage in order" : "Run the " + name + " stage");
    sub->add_option("--config", config_path, "Pipeline config (JSON)")->required();
    sub->add_flag("--force", force, "Re-run even when inputs are unchanged");
    sub->add_option("--seed", seed, "Override the config seed");
  }

  std::string synth_dir;
  std::size_t synth_count = 120;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "Write a synthetic demo corpus, lexicons and config");
  synth->add_option("--out", synth_dir, "Target directory")->required();
  synth->add_option("--count", synth_count, "Number of photographs")->check(CLI::Range(1, 100000));
  synth->add_option("--seed", synth_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (synth->parsed()) {
      numis::write_demo_project(synth_dir, synth_count, synth_seed);
      std::cout << "wrote demo project to " << synth_dir << "\n";
      return kOk;
    }
    const auto config = numis::PipelineConfig::load(config_path, seed);
    for (auto* sub : app.get_subcommands()) {
      if (sub->get_name() == "all") {
        numis::run_pipeline(config, force);
      } else {
        numis::run_stage(sub->get_name(), config, force);
      }
    }
    return kOk;
  } catch (const numis::ConfigError& e) {
    return report_failure("config error", e, kUsage);
  } catch (const numis::NumericError& e) {
    return report_failure("numeric failure", e, kNumeric);
  } catch (const numis::Error& e) {
    return report_failure("data error", e, kData);
  } catch (const std::exception& e) {
    return report_failure("error", e, kData);
  }
}
