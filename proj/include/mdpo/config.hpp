#pragma once

#include "mdpo/diffusion.hpp"
#include "mdpo/dpo.hpp"
#include "mdpo/metrics.hpp"
#include "mdpo/motion_domain.hpp"
#include "mdpo/ranker.hpp"
#include "mdpo/vae.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mdpo {

struct DomainSection {
  DomainConfig domain;
  std::uint64_t seed = 7;
};

struct PamSection {
  int K = 4;
  int n_prompts = 1600;  // train prompts used for the preference set (clamped to the split)
  ScorerKind scorer = ScorerKind::learned;
  std::vector<SpaceKind> generators{SpaceKind::latent, SpaceKind::raw};
  std::uint64_t seed = 61;
};

struct AlignSection {
  AlignmentConfig config;
  SpaceKind target = SpaceKind::latent;
  int online_prompts = 256;
};

struct EvalSection {
  EvalOptions options;
  int n_gen = 8;
  int real_draws = 8;  // ground-truth draws per test prompt for the reference population
  ScorerKind protocol_scorer = ScorerKind::learned;
  std::uint64_t gen_seed = 71;
};

struct RunConfig {
  DomainSection domain;
  VaeConfig vae;
  DiffusionConfig diffusion_raw{.space = SpaceKind::raw, .beta_min = 1e-4, .beta_max = 0.02, .seed = 22};
  DiffusionConfig diffusion_latent;
  RankerConfig ranker;
  PamSection pam;
  AlignSection align;
  EvalSection eval;
  std::uint64_t seed = 1;
};

// Every key is optional; unknown keys and wrong types raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

// Canonical JSON of one section ("domain", "vae", ...).
nlohmann::json section_json(const RunConfig& c, std::string_view section);
std::string section_hash(const RunConfig& c, std::string_view section);
std::string config_hash(const RunConfig& c);

AlignmentConfig alignment_from_json(const nlohmann::json& j, AlignmentConfig base = {});

}  // namespace mdpo
