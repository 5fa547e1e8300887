#pragma once

#include "mdpo/checkpoint.hpp"
#include "mdpo/motion_domain.hpp"
#include "mdpo/nn.hpp"
#include "mdpo/vae.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mdpo {

enum class ScheduleKind { linear, cosine };
const char* to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(std::string_view s);

// Arrays are indexed by t - 1 for t in [1, T].
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  double beta_min = 0, beta_max = 0;
  std::vector<double> betas, alphas, alpha_bars;

  int steps() const { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas[t - 1]; }
  double alpha(int t) const { return alphas[t - 1]; }
  double alpha_bar(int t) const { return alpha_bars[t - 1]; }
};

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_min, double beta_max);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
nn::Mat q_sample(const nn::Mat& x0, int t, const nn::Mat& eps, const NoiseSchedule& sched);

enum class SpaceKind { raw, latent };
const char* to_string(SpaceKind s);
SpaceKind space_from_string(std::string_view s);

// Provenance of a motion candidate; the order is the ranking tie-break order.
enum class GeneratorTag { raw = 0, latent = 1, ground_truth = 2 };
const char* to_string(GeneratorTag t);
GeneratorTag tag_from_string(std::string_view s);

struct DenoiserConfig {
  int state_dim = 16;
  int hidden = 256;
  int depth = 3;  // hidden layers; the trunk has depth + 1 linear layers
  int token_dim = 32;
  int time_dim = 16;
};

// One entry per batch column; nullptr is the unconditional (dropped) condition.
using CondBatch = std::vector<const TokenSeq*>;

// Conditional epsilon-predictor: trunk MLP over [x_t, sin/cos(t), mean token embedding].
class DenoiserNet {
 public:
  struct Cache {
    nn::Mlp::Cache trunk;
    CondBatch cond;
  };

  DenoiserNet() = default;
  DenoiserNet(const DenoiserConfig& cfg, std::uint64_t seed);
  static DenoiserNet attach(const DenoiserConfig& cfg, nn::ParamStore params);

  nn::Mat forward(const nn::Mat& x_t, const std::vector<int>& t, const CondBatch& cond,
                  Cache* cache = nullptr) const;
  void backward(const Cache& cache, const nn::Mat& d_out, nn::Grads& grads) const;

  const DenoiserConfig& config() const { return cfg_; }
  int trunk_layers() const { return trunk_.layers(); }
  // Tensor indices belonging to the final `L` trunk layers.
  std::vector<std::size_t> last_layer_tensors(int L) const;
  std::size_t embedding_index() const { return embed_idx_; }

  nn::ParamStore params;

 private:
  nn::Mat time_embedding(const std::vector<int>& t) const;
  void bind();

  DenoiserConfig cfg_;
  nn::Mlp trunk_;
  std::size_t embed_idx_ = 0;
};

// Element-mean squared error between eps and the prediction at q_sample(x0, t, eps).
double ddpm_loss(const DenoiserNet& net, const nn::Mat& x0, const CondBatch& cond, const std::vector<int>& t,
                 const nn::Mat& eps, const NoiseSchedule& sched, nn::Grads* grads = nullptr);

struct DiffusionConfig {
  SpaceKind space = SpaceKind::latent;
  ScheduleKind schedule = ScheduleKind::linear;
  int T = 100;
  double beta_min = 1e-3;
  double beta_max = 0.2;
  int hidden = 256;
  int depth = 3;
  int steps = 4000;
  int batch = 64;
  double lr = 1e-3;
  double cond_dropout = 0.1;
  std::uint64_t seed = 21;
};

// A trained text-conditioned motion generator: denoiser + schedule, plus the
// frozen VAE and latent standardization for the latent space.
class Generator {
 public:
  struct Sample {
    MotionSequence motion;
    Eigen::VectorXd state;  // final x_0 in the generator's diffusion space
  };

  SpaceKind space = SpaceKind::latent;
  DenoiserNet net;
  NoiseSchedule sched;
  std::optional<Vae> vae;
  Eigen::VectorXd latent_shift, latent_scale;
  NormStats norm;
  int frames = 60;
  int fps = 20;

  GeneratorTag tag() const { return space == SpaceKind::raw ? GeneratorTag::raw : GeneratorTag::latent; }
  int state_dim() const { return space == SpaceKind::raw ? frames * kFeatures : vae->latent_dim(); }

  Eigen::VectorXd to_state(const MotionSequence& m) const;
  nn::Mat to_states(const std::vector<MotionSequence>& motions) const;
  MotionSequence from_state(const Eigen::VectorXd& state) const;
  std::vector<MotionSequence> from_states(const nn::Mat& states) const;

  // Ancestral sampling; sample i draws all of its noise from seeds[i].
  std::vector<Sample> sample(const std::vector<TokenSeq>& conds, const std::vector<std::uint64_t>& seeds) const;
  // Instrumented form: `trace`, when given, receives x_t before each reverse step and x_0 at the end.
  std::vector<Sample> sample(const std::vector<TokenSeq>& conds, const std::vector<std::uint64_t>& seeds,
                             std::vector<nn::Mat>* trace) const;

  Checkpoint to_checkpoint() const;
  static Generator from_checkpoint(const Checkpoint& ckpt);
};

struct DiffusionTrainResult {
  Generator generator;
  std::vector<double> loss_history;
};

// `vae` is required for the latent space and is copied into the generator, frozen.
DiffusionTrainResult train_diffusion(const MotionDataset& train, const DiffusionConfig& cfg,
                                     const Vae* vae = nullptr);

}  // namespace mdpo
