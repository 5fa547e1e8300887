#include "mdpo/error.hpp"
#include "mdpo/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Preference alignment pipeline for text-conditioned motion diffusion"};
  std::string config_path, out = "runs/default", stage = "all", grid, space;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");
  app.add_option("--seed", seed, "global seed, overrides the config");
  app.add_option("--out", out, "artifact directory");
  app.add_option("--stage", stage,
                 "gen-data | train-vae | train-diffusion | train-ranker | build-pam | align | eval | ablate | "
                 "report | all");
  app.add_option("--space", space, "diffusion space for train-diffusion")->check(CLI::IsMember({"raw", "latent"}));
  app.add_option("--grid", grid, "ablation grid JSON for the ablate stage");
  CLI11_PARSE(app, argc, argv);

  try {
    mdpo::PipelineOptions opt;
    if (!config_path.empty()) opt.config = mdpo::load_config(config_path);
    if (seed) opt.config.seed = *seed;
    opt.out = out;
    if (!grid.empty()) opt.grid = grid;

    std::vector<mdpo::StageResult> results;
    if (stage == "all") {
      results = mdpo::run_pipeline(opt);
    } else {
      if (stage == "train-diffusion") {
        if (space.empty()) throw mdpo::ConfigError("train-diffusion needs --space raw|latent");
        stage += "-" + space;
      }
      results.push_back(mdpo::run_stage(stage, opt));
    }
    for (const auto& r : results)
      std::cout << r.stage << ' ' << (r.skipped ? "up-to-date" : "done") << ' ' << r.key.substr(0, 16) << '\n';
    return 0;
  } catch (const mdpo::Error& e) {
    std::cerr << "error [" << mdpo::to_string(e.kind()) << "]: " << e.what() << '\n';
    return mdpo::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
