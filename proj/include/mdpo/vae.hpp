#pragma once

#include "mdpo/checkpoint.hpp"
#include "mdpo/motion_domain.hpp"
#include "mdpo/nn.hpp"

#include <vector>

namespace mdpo {

struct VaeConfig {
  int frames = 60;
  int latent_dim = 16;
  int hidden = 128;
  int steps = 1500;
  int batch = 64;
  double lr = 1e-3;
  double kl_weight = 1e-3;
  double warmup_frac = 0.1;
  std::uint64_t seed = 11;
};

struct EncoderOutput {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;  // strictly positive
};

struct LatentVector {
  Eigen::VectorXd z;
};

struct ElboTerms {
  double total = 0, recon = 0, kl = 0;
};

// Closed form KL(N(mu, diag(sigma^2)) || N(0, I)).
double kl_to_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma);

// z = mu + sigma * rho
LatentVector sample_latent(const EncoderOutput& enc, const Eigen::VectorXd& rho);

// MLP encoder/decoder over flattened, normalized F x V motions.
class Vae {
 public:
  static constexpr double kMinSigma = 1e-4;
  static constexpr double kMaxSigma = 10.0;

  Vae() = default;
  Vae(const VaeConfig& cfg, std::uint64_t seed);

  static Vae from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "vae");
  // Appends this model's tensors (prefixed) and metadata into `ckpt`.
  void write_to(Checkpoint& ckpt, const std::string& prefix = "vae") const;
  Checkpoint to_checkpoint() const;

  // Normalized input; other frame counts are resampled to the configured F.
  EncoderOutput encode(const MotionMat& normalized) const;
  // Normalized output with `frames` rows.
  MotionMat decode(const LatentVector& z, int frames) const;

  // Column-batched forms over flattened motions (F*V rows).
  void encode_batch(const nn::Mat& x, nn::Mat& mu, nn::Mat& log_sigma) const;
  nn::Mat decode_batch(const nn::Mat& z) const;

  // Reconstruction MSE (mean over elements) + kl_weight * batch-mean KL.
  // `rho` is the D x B standard-normal draw. Gradients accumulate into `grads` when given.
  ElboTerms elbo_loss(const nn::Mat& x, const nn::Mat& rho, double kl_weight, nn::Grads* grads) const;

  int frames() const { return cfg_.frames; }
  int latent_dim() const { return cfg_.latent_dim; }
  int input_dim() const { return cfg_.frames * kFeatures; }
  const VaeConfig& config() const { return cfg_; }

  nn::ParamStore params;

 private:
  void bind();

  VaeConfig cfg_;
  nn::Mlp encoder_, decoder_;
};

nn::Mat flatten_batch(const std::vector<MotionMat>& motions);
MotionMat unflatten(const Eigen::VectorXd& column, int frames);

struct VaeTrainResult {
  Vae vae;
  std::vector<double> loss_history;
};

VaeTrainResult train_vae(const MotionDataset& train, const VaeConfig& cfg);

}  // namespace mdpo
