#pragma once

#include "mdpo/diffusion.hpp"
#include "mdpo/pam.hpp"
#include "mdpo/ranker.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mdpo {

enum class FreezeKind { denoiser_only, last_layers };

struct FreezePolicy {
  FreezeKind kind = FreezeKind::denoiser_only;
  int L = 2;
};

std::string to_string(const FreezePolicy& p);
FreezePolicy freeze_policy_from_string(std::string_view s);  // "denoiser_only" or "last_layers(L)"

struct AlignmentConfig {
  double beta_dpo = 5.0;  // beta_eff = beta_dpo * T
  Selection selection = Selection::stochastic;
  double gt_p = 0.0;
  bool online = false;
  int online_K = 4;
  bool pam_plus = true;  // use candidates from every generator in the preference set
  FreezePolicy freeze;
  double learning_rate = 1e-4;
  double momentum = 0.0;
  int steps = 2000;
  int batch = 32;
  int inner_iterations = 1;
  std::uint64_t seed = 41;

  void validate() const;
};

// trainable[i] refers to tensor i of the denoiser parameter store. The VAE is
// never part of the trainable set.
struct FreezeMask {
  std::vector<bool> trainable;
  std::size_t trainable_count() const;
};

FreezeMask apply_freeze(const Generator& target, const FreezePolicy& policy);

// Per-pair preference inputs in the denoiser's state space (one column per pair).
struct DpoBatch {
  nn::Mat x_w, x_l;
  nn::Mat eps_w, eps_l;
  std::vector<int> t;
  std::vector<TokenSeq> cond;
};

struct DpoLoss {
  double loss = 0;               // mean over pairs
  double implicit_accuracy = 0;  // fraction of pairs with a negative bracket
  std::vector<double> brackets;
};

// Mean over pairs of -log sigmoid(-beta_eff * bracket). Gradients, when
// requested, flow into the target only.
DpoLoss dpo_diffusion_loss(const DenoiserNet& target, const DenoiserNet& reference, const DpoBatch& batch,
                           const NoiseSchedule& sched, double beta_eff, nn::Grads* grads = nullptr);

double dpo_diffusion_loss(const DenoiserNet& target, const DenoiserNet& reference, const Eigen::VectorXd& winner,
                          const Eigen::VectorXd& loser, const TokenSeq& cond, int t, const Eigen::VectorXd& eps_w,
                          const Eigen::VectorXd& eps_l, const NoiseSchedule& sched, double beta_eff);

struct AlignLogEntry {
  int step = 0;
  double loss = 0;
  double implicit_accuracy = 0;
  double lr = 0;
};

struct AlignResult {
  Generator aligned;
  std::vector<AlignLogEntry> log;
  nlohmann::json provenance;
};

using GtSource = std::map<std::int64_t, MotionSequence>;

struct AlignProvenance {
  std::string base_checkpoint;
  std::string pam_hash;
};

AlignResult align_offline(const Generator& base, const PamDataset& pam, const GtSource& gt,
                          const AlignmentConfig& cfg, const AlignProvenance& prov = {});

AlignResult align_online(const Generator& base, const std::vector<PromptSpec>& prompts, const Scorer& scorer,
                         const GtSource& gt, const AlignmentConfig& cfg, const AlignProvenance& prov = {});

std::string serialize_log(const std::vector<AlignLogEntry>& log);
nlohmann::json to_json(const AlignmentConfig& cfg);

}  // namespace mdpo
