#include "mdpo/vae.hpp"

#include "mdpo/error.hpp"

#include <cmath>

namespace mdpo {

namespace {
const double kLogMin = std::log(Vae::kMinSigma);
const double kLogMax = std::log(Vae::kMaxSigma);
}  // namespace

double kl_to_standard_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma) {
  double kl = 0;
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    kl += mu(i) * mu(i) + sigma(i) * sigma(i) - 1.0 - 2.0 * std::log(sigma(i));
  return 0.5 * kl;
}

LatentVector sample_latent(const EncoderOutput& enc, const Eigen::VectorXd& rho) {
  if (rho.size() != enc.mu.size()) throw ContractError("rho dimension mismatch");
  if (!rho.allFinite()) throw ContractError("rho must be finite");
  return LatentVector{enc.mu + enc.sigma.cwiseProduct(rho)};
}

Vae::Vae(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  const int in = input_dim(), h = cfg.hidden, d = cfg.latent_dim;
  encoder_ = nn::Mlp(params, "enc", {in, h, h, 2 * d}, nn::Activation::silu, rng, 0.1);
  decoder_ = nn::Mlp(params, "dec", {d, h, h, in}, nn::Activation::silu, rng);
}

void Vae::bind() {
  const int in = input_dim(), h = cfg_.hidden, d = cfg_.latent_dim;
  encoder_ = nn::Mlp::attach(params, "enc", {in, h, h, 2 * d}, nn::Activation::silu);
  decoder_ = nn::Mlp::attach(params, "dec", {d, h, h, in}, nn::Activation::silu);
}

void Vae::write_to(Checkpoint& ckpt, const std::string& prefix) const {
  auto& m = ckpt.metadata[prefix];
  m["frames"] = cfg_.frames;
  m["latent_dim"] = cfg_.latent_dim;
  m["hidden"] = cfg_.hidden;
  for (const auto& t : params.tensors()) ckpt.params.add(prefix + "/" + t.name, t.value);
}

Checkpoint Vae::to_checkpoint() const {
  Checkpoint c;
  c.metadata["kind"] = "vae";
  write_to(c);
  return c;
}

Vae Vae::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  Vae v;
  const auto& m = ckpt.metadata.at(prefix);
  v.cfg_.frames = m.at("frames").get<int>();
  v.cfg_.latent_dim = m.at("latent_dim").get<int>();
  v.cfg_.hidden = m.at("hidden").get<int>();
  const std::string p = prefix + "/";
  for (const auto& t : ckpt.params.tensors())
    if (t.name.rfind(p, 0) == 0) v.params.add(t.name.substr(p.size()), t.value);
  v.bind();
  return v;
}

nn::Mat flatten_batch(const std::vector<MotionMat>& motions) {
  if (motions.empty()) return {};
  const Eigen::Index n = motions.front().size();
  nn::Mat x(n, static_cast<Eigen::Index>(motions.size()));
  for (std::size_t i = 0; i < motions.size(); ++i) {
    if (motions[i].size() != n) throw ContractError("motion batch with mixed shapes");
    x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(motions[i].data(), n);
  }
  return x;
}

MotionMat unflatten(const Eigen::VectorXd& column, int frames) {
  return Eigen::Map<const MotionMat>(column.data(), frames, kFeatures);
}

void Vae::encode_batch(const nn::Mat& x, nn::Mat& mu, nn::Mat& log_sigma) const {
  const nn::Mat out = encoder_.forward(params, x);
  const int d = cfg_.latent_dim;
  mu = out.topRows(d);
  log_sigma = out.bottomRows(d).cwiseMax(kLogMin).cwiseMin(kLogMax);
}

nn::Mat Vae::decode_batch(const nn::Mat& z) const { return decoder_.forward(params, z); }

EncoderOutput Vae::encode(const MotionMat& normalized) const {
  if (normalized.cols() != kFeatures) throw ContractError("encode expects F x " + std::to_string(kFeatures));
  MotionSequence tmp{normalized, 20};
  if (normalized.rows() != cfg_.frames) tmp = resample(tmp, cfg_.frames);
  nn::Mat mu, ls;
  encode_batch(flatten_batch({tmp.data}), mu, ls);
  return EncoderOutput{mu.col(0), ls.col(0).array().exp().matrix()};
}

MotionMat Vae::decode(const LatentVector& z, int frames) const {
  if (z.z.size() != cfg_.latent_dim) throw ContractError("latent dimension mismatch");
  if (frames < 2) throw ContractError("decode frames out of range");
  MotionSequence out{unflatten(decode_batch(z.z), cfg_.frames), 20};
  if (frames != cfg_.frames) out = resample(out, frames);
  return out.data;
}

ElboTerms Vae::elbo_loss(const nn::Mat& x, const nn::Mat& rho, double kl_weight, nn::Grads* grads) const {
  const int d = cfg_.latent_dim;
  const double b = static_cast<double>(x.cols());
  if (rho.rows() != d || rho.cols() != x.cols()) throw ContractError("rho shape mismatch");

  nn::Mlp::Cache enc_cache, dec_cache;
  const nn::Mat out = encoder_.forward(params, x, grads ? &enc_cache : nullptr);
  const nn::Mat mu = out.topRows(d);
  const nn::Mat ls_raw = out.bottomRows(d);
  const nn::Mat ls = ls_raw.cwiseMax(kLogMin).cwiseMin(kLogMax);
  const nn::Mat sigma = ls.array().exp().matrix();
  const nn::Mat z = mu + sigma.cwiseProduct(rho);
  const nn::Mat xhat = decoder_.forward(params, z, grads ? &dec_cache : nullptr);

  ElboTerms e;
  const nn::Mat diff = xhat - x;
  e.recon = diff.squaredNorm() / static_cast<double>(diff.size());
  e.kl = 0.5 * (mu.array().square() + sigma.array().square() - 1.0 - 2.0 * ls.array()).sum() / b;
  e.total = e.recon + kl_weight * e.kl;
  if (!std::isfinite(e.total)) throw NumericError("non-finite ELBO");

  if (grads) {
    const nn::Mat dxhat = diff * (2.0 / static_cast<double>(diff.size()));
    const nn::Mat dz = decoder_.backward(params, dec_cache, dxhat, *grads);
    nn::Mat dout(2 * d, x.cols());
    dout.topRows(d) = dz + mu * (kl_weight / b);
    nn::Mat dls = dz.cwiseProduct(rho).cwiseProduct(sigma) +
                  ((sigma.array().square() - 1.0) * (kl_weight / b)).matrix();
    for (Eigen::Index j = 0; j < dls.cols(); ++j)
      for (Eigen::Index i = 0; i < d; ++i)
        if (ls_raw(i, j) < kLogMin || ls_raw(i, j) > kLogMax) dls(i, j) = 0.0;
    dout.bottomRows(d) = dls;
    encoder_.backward(params, enc_cache, dout, *grads);
  }
  return e;
}

VaeTrainResult train_vae(const MotionDataset& train, const VaeConfig& cfg) {
  if (train.records.empty()) throw ContractError("train split is empty");
  VaeTrainResult res{Vae(cfg, derive_seed(cfg.seed, {1})), {}};
  Vae& vae = res.vae;

  std::vector<MotionMat> data;
  data.reserve(train.records.size());
  for (const auto& r : train.records) {
    MotionSequence m = r.motion.frames() == cfg.frames ? r.motion : resample(r.motion, cfg.frames);
    data.push_back(train.norm.normalize(m));
  }
  const nn::Mat all = flatten_batch(data);

  Rng rng(derive_seed(cfg.seed, {2}));
  nn::Adam opt(vae.params, {.lr = cfg.lr});
  nn::Grads grads(vae.params);
  const double warmup = std::max(1.0, cfg.warmup_frac * cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    nn::Mat x(all.rows(), cfg.batch);
    for (int j = 0; j < cfg.batch; ++j) x.col(j) = all.col(static_cast<Eigen::Index>(rng.index(all.cols())));
    const nn::Mat rho = rng.normal_matrix(cfg.latent_dim, cfg.batch);
    const double w = cfg.kl_weight * std::min(1.0, (step + 1) / warmup);
    grads.zero();
    ElboTerms e;
    try {
      e = vae.elbo_loss(x, rho, w, &grads);
    } catch (const NumericError& ex) {
      throw TrainingError(std::string("VAE diverged: ") + ex.what(), step);
    }
    if (!grads.all_finite()) throw TrainingError("VAE gradient non-finite", step);
    opt.step(vae.params, grads);
    res.loss_history.push_back(e.total);
  }
  return res;
}

}  // namespace mdpo
