#pragma once

#include "mdpo/checkpoint.hpp"
#include "mdpo/diffusion.hpp"
#include "mdpo/motion_domain.hpp"
#include "mdpo/nn.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mdpo {

struct RankerConfig {
  int embed_dim = 16;
  int token_dim = 32;
  int text_hidden = 64;
  int motion_hidden = 128;
  int frames = 60;
  double temperature = 0.07;
  int batch = 32;
  int steps = 1500;
  double lr = 1e-3;
  std::uint64_t seed = 31;
};

// Contrastive text/motion model; both branches emit unit vectors in one space.
class JointEmbedder {
 public:
  JointEmbedder() = default;
  JointEmbedder(const RankerConfig& cfg, const NormStats& norm, std::uint64_t seed);

  nn::Mat embed_texts(const std::vector<TokenSeq>& tokens) const;
  nn::Mat embed_motions(const std::vector<MotionSequence>& motions) const;
  Eigen::VectorXd embed_text(const TokenSeq& tokens) const;
  Eigen::VectorXd embed_motion(const MotionSequence& motion) const;

  // Symmetric in-batch softmax over cosine similarities / temperature. Columns of
  // `motion_x` are flattened normalized motions; pairs with identical token
  // sequences count as shared positives.
  double contrastive_loss(const std::vector<TokenSeq>& tokens, const nn::Mat& motion_x, nn::Grads* grads) const;

  nn::Mat motion_inputs(const std::vector<MotionSequence>& motions) const;

  Checkpoint to_checkpoint() const;
  static JointEmbedder from_checkpoint(const Checkpoint& ckpt);

  int embed_dim() const { return cfg_.embed_dim; }
  const RankerConfig& config() const { return cfg_; }

  nn::ParamStore params;

 private:
  nn::Mat pooled_tokens(const std::vector<TokenSeq>& tokens) const;
  void bind();

  RankerConfig cfg_;
  NormStats norm_;
  nn::Mlp text_mlp_, motion_mlp_;
  std::size_t embed_idx_ = 0;
};

struct RankerTrainResult {
  JointEmbedder embedder;
  std::vector<double> loss_history;
};

RankerTrainResult train_ranker(const MotionDataset& train, const RankerConfig& cfg);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double score(const TokenSeq& tokens, const MotionSequence& motion, const JointEmbedder& embedder);

struct OracleJudgement {
  FamilyFit fit;
  double realism_residual = 0;
  double attribute_mismatch = 0;
  double score = 0;  // -(residual + mismatch); 0 is the maximum
};

OracleJudgement oracle_judge(const PromptSpec& prompt, const MotionSequence& motion);
double oracle_score(const PromptSpec& prompt, const MotionSequence& motion);

inline constexpr int kOracleFeatureDim = 4;
// Prompt-relative features (speed, amplitude and curvature errors, log residual)
// forming the oracle evaluation space.
Eigen::VectorXd oracle_features(const PromptSpec& prompt, const MotionSequence& motion);

enum class ScorerKind { learned, oracle };
const char* to_string(ScorerKind k);
ScorerKind scorer_from_string(std::string_view s);

// Common scoring interface for the learned and analytic judges.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(const PromptSpec& prompt, const TokenSeq& tokens,
                                    const std::vector<MotionSequence>& motions) const = 0;
  virtual std::string id() const = 0;
};

class LearnedScorer final : public Scorer {
 public:
  LearnedScorer(const JointEmbedder& embedder, std::string checkpoint_hash)
      : embedder_(&embedder), hash_(std::move(checkpoint_hash)) {}
  std::vector<double> score(const PromptSpec&, const TokenSeq& tokens,
                            const std::vector<MotionSequence>& motions) const override;
  std::string id() const override { return "learned:" + hash_; }

 private:
  const JointEmbedder* embedder_;
  std::string hash_;
};

class OracleScorer final : public Scorer {
 public:
  std::vector<double> score(const PromptSpec& prompt, const TokenSeq&,
                            const std::vector<MotionSequence>& motions) const override;
  std::string id() const override { return "oracle"; }
};

struct ScoredCandidate {
  int motion_index = 0;
  double score = 0;
  GeneratorTag generator_tag = GeneratorTag::latent;
};

struct RankedSet {
  std::int64_t prompt_id = 0;
  std::vector<ScoredCandidate> candidates;  // descending score
  std::vector<MotionSequence> motions;      // indexed by motion_index
};

// Descending by score; ties by generator tag (raw < latent < ground_truth), then index.
std::vector<ScoredCandidate> order_candidates(const std::vector<double>& scores,
                                              const std::vector<GeneratorTag>& tags);

RankedSet rank(const PromptSpec& prompt, const TokenSeq& tokens, std::vector<MotionSequence> motions,
               const std::vector<GeneratorTag>& tags, const Scorer& scorer);

}  // namespace mdpo
