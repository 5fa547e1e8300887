#pragma once

#include "mdpo/config.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mdpo {

struct PipelineOptions {
  RunConfig config;
  std::filesystem::path out;
  std::optional<std::filesystem::path> grid;  // ablation grid for `ablate`
};

struct StageResult {
  std::string stage;
  std::string key;
  bool skipped = false;  // outputs already present for this key
  nlohmann::json summary;
};

// Stage names: gen-data, train-vae, train-diffusion-raw, train-diffusion-latent,
// train-ranker, build-pam, align, eval, ablate, report.
const std::vector<std::string>& stage_names();

// Key a stage would be written under for this configuration.
std::string expected_stage_key(const RunConfig& cfg, const std::string& stage);

StageResult run_stage(const std::string& stage, const PipelineOptions& opt);

// gen-data through report, skipping stages whose outputs are current.
std::vector<StageResult> run_pipeline(const PipelineOptions& opt);

struct AblationVariant {
  std::string name;
  ScorerKind scorer = ScorerKind::learned;
  Selection selection = Selection::edge;
  double gt_p = 0;
  bool online = false;
  bool pam_plus = true;
};

// Either {"variants": [...]} or {"axes": {"scorer": [...], "stochastic": [...], ...}}.
std::vector<AblationVariant> parse_grid(const nlohmann::json& j);
std::vector<AblationVariant> default_grid();

}  // namespace mdpo
