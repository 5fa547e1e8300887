#pragma once

#include "mdpo/diffusion.hpp"
#include "mdpo/ranker.hpp"
#include "mdpo/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mdpo {

struct GenerationSet {
  std::int64_t prompt_id = 0;
  std::vector<MotionSequence> motions;
  std::vector<GeneratorTag> generator_tags;
  std::vector<std::uint64_t> seeds;
  // Final diffusion state of each latent-space generation; empty otherwise.
  std::vector<std::optional<Eigen::VectorXd>> latents;
};

enum class Selection { edge, stochastic };
const char* to_string(Selection s);
Selection selection_from_string(std::string_view s);

inline constexpr int kGroundTruthIndex = -1;

struct PreferencePair {
  std::int64_t prompt_id = 0;
  TokenSeq tokens;
  int winner = 0;  // motion index in the ranked set, or kGroundTruthIndex
  int loser = 0;
  int winner_rank = 0;
  int loser_rank = 0;
  double winner_score = 0;
  double loser_score = 0;
  bool gt_substituted = false;
  bool online = false;
  Selection selection = Selection::edge;
  std::optional<MotionSequence> gt_winner;
};

struct PamRecord {
  PromptSpec prompt;
  TokenSeq tokens;
  RankedSet ranked;
  std::vector<std::uint64_t> seeds;                       // by motion index
  std::vector<std::optional<Eigen::VectorXd>> latents;    // by motion index
};

inline constexpr int kPamSchemaVersion = 1;

struct PamManifest {
  int schema_version = kPamSchemaVersion;
  std::vector<std::string> generator_checkpoints;
  std::string ranker_id;
  int K = 4;
  std::uint64_t seed = 0;
  std::string content_hash;
};

struct PamDataset {
  PamManifest manifest;
  std::vector<PamRecord> records;  // ascending prompt_id

  const PamRecord& find(std::int64_t prompt_id) const;
};

struct PamGenerator {
  const Generator* generator = nullptr;
  std::string checkpoint_hash;
};

// K samples per generator per prompt, ranked together. `seed` derives one
// sub-seed per (prompt, generator, k).
PamDataset build_pam(const std::vector<PamGenerator>& generators, const std::vector<PromptSpec>& prompts, int K,
                     const Scorer& scorer, std::uint64_t seed);

GenerationSet generate_candidates(const std::vector<PamGenerator>& generators, const PromptSpec& prompt, int K,
                                  std::uint64_t seed);

std::int64_t pair_count(int N);

PreferencePair select_pair_edge(const RankedSet& rs);
// Winner uniform over the top floor(N/2) ranks, loser over the bottom floor(N/2);
// the middle rank of an odd N is never drawn.
PreferencePair select_pair_stochastic(const RankedSet& rs, Rng& rng);
PreferencePair select_pair(const RankedSet& rs, Selection s, Rng& rng);

PreferencePair maybe_substitute_gt(PreferencePair pair, const MotionSequence& gt_motion, double gt_p, Rng& rng);

std::string serialize_pam(const PamDataset& pam);
PamDataset parse_pam(const std::string& text);
void save_pam(const std::filesystem::path& path, const PamDataset& pam);
PamDataset load_pam(const std::filesystem::path& path);
// Digest of the record lines, as stored in the manifest.
std::string pam_content_hash(const PamDataset& pam);

}  // namespace mdpo
