#pragma once

#include "mdpo/diffusion.hpp"
#include "mdpo/ranker.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mdpo {

struct EmbeddingStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int n = 0;
};

// Columns are samples. Requires n >= dim + 1; covariance is the unbiased estimate.
EmbeddingStats embedding_stats(const nn::Mat& samples);
EmbeddingStats embedding_stats(const std::vector<MotionSequence>& motions, const JointEmbedder& embedder);

double fid(const EmbeddingStats& a, const EmbeddingStats& b);

struct RPrecision {
  double top1 = 0, top2 = 0, top3 = 0;
  int pools = 0;
};

// Motions are compared against the texts of their pool. Pools hold `pool_size`
// distinct token sequences and are formed after a seeded shuffle.
RPrecision r_precision(const nn::Mat& text_emb, const nn::Mat& motion_emb, const std::vector<TokenSeq>& tokens,
                       int pool_size, std::uint64_t seed);
double r_precision(const nn::Mat& text_emb, const nn::Mat& motion_emb, const std::vector<TokenSeq>& tokens, int k,
                   int pool_size, std::uint64_t seed);

double mm_dist(const nn::Mat& text_emb, const nn::Mat& motion_emb);
double diversity(const nn::Mat& motion_emb, int n_pairs, std::uint64_t seed);

struct EmbeddingGroup {
  std::int64_t key = 0;  // seeds this group's pair draws
  nn::Mat emb;
};
double multimodality(const std::vector<EmbeddingGroup>& groups, int draws_per_prompt, std::uint64_t seed);

struct MetricValue {
  double value = 0;  // on the full evaluation set
  double mean = 0;   // bootstrap mean
  double ci95 = 0;   // 1.96 * sd / sqrt(replications)
};

struct EvalOptions {
  int pool_size = 32;
  int diversity_pairs = 300;
  int mm_draws = 10;
  int bootstrap = 20;
  std::uint64_t seed = 51;
};

struct EvalReport {
  MetricValue top1, top2, top3, mm_dist, diversity, fid, multimodality, oracle_fid, oracle_score;
  bool has_multimodality = false;
  std::string model_id;
  std::string scorer_id;
  std::string subset = "all";
  int n_samples = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

std::string csv_header();
std::string csv_row(const std::string& name, const EvalReport& r);

// Generated motions grouped by prompt, one group per prompt.
struct GenerationGroups {
  std::vector<PromptSpec> prompts;
  std::vector<std::vector<MotionSequence>> motions;
};

// Reference population for the distribution metrics.
struct RealSet {
  std::vector<PromptSpec> prompts;
  std::vector<MotionSequence> motions;
};

EvalReport evaluate(const GenerationGroups& gen, const RealSet& real, const JointEmbedder& embedder,
                    const EvalOptions& opt);

double oracle_fid(const std::vector<PromptSpec>& gen_prompts, const std::vector<MotionSequence>& gen,
                  const std::vector<PromptSpec>& real_prompts, const std::vector<MotionSequence>& real);

GenerationGroups generate_groups(const Generator& g, const std::vector<PromptSpec>& prompts, int n_gen,
                                 std::uint64_t seed);

struct WinnerLoserReport {
  EvalReport all, winners, losers;
  double fid_gap = 0;         // losers minus winners, learned space
  double oracle_fid_gap = 0;  // losers minus winners, oracle space
};

WinnerLoserReport winner_loser_protocol(const GenerationGroups& gen, const Scorer& scorer, const RealSet& real,
                                        const JointEmbedder& embedder, const EvalOptions& opt);
WinnerLoserReport winner_loser_protocol(const Generator& model, const std::vector<PromptSpec>& prompts, int n_gen,
                                        const Scorer& scorer, const RealSet& real, const JointEmbedder& embedder,
                                        const EvalOptions& opt, std::uint64_t gen_seed);

}  // namespace mdpo
