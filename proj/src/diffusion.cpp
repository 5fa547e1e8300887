#include "mdpo/diffusion.hpp"

#include "mdpo/error.hpp"

#include <cmath>
#include <numbers>

namespace mdpo {

const char* to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind: " + std::string(s));
}

const char* to_string(SpaceKind s) { return s == SpaceKind::raw ? "raw" : "latent"; }

SpaceKind space_from_string(std::string_view s) {
  if (s == "raw") return SpaceKind::raw;
  if (s == "latent") return SpaceKind::latent;
  throw ConfigError("unknown diffusion space: " + std::string(s));
}

const char* to_string(GeneratorTag t) {
  switch (t) {
    case GeneratorTag::raw: return "raw";
    case GeneratorTag::latent: return "latent";
    case GeneratorTag::ground_truth: return "ground_truth";
  }
  return "?";
}

GeneratorTag tag_from_string(std::string_view s) {
  if (s == "raw") return GeneratorTag::raw;
  if (s == "latent") return GeneratorTag::latent;
  if (s == "ground_truth") return GeneratorTag::ground_truth;
  throw IntegrityError("unknown generator tag: " + std::string(s));
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_min > 0 && beta_min <= beta_max && beta_max < 1))
    throw ConfigError("schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.kind = kind;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.resize(T);
  if (kind == ScheduleKind::linear) {
    for (int i = 0; i < T; ++i)
      s.betas[i] = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / (T - 1);
  } else {
    // Squared-cosine alpha-bar curve, betas clipped into [beta_min, beta_max].
    constexpr double off = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + off) / (1 + off) * std::numbers::pi / 2);
      return c * c;
    };
    for (int i = 0; i < T; ++i) {
      const double b = 1.0 - f(i + 1) / f(i);
      s.betas[i] = std::clamp(b, beta_min, beta_max);
    }
  }
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

nn::Mat q_sample(const nn::Mat& x0, int t, const nn::Mat& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw ContractError("timestep " + std::to_string(t) + " out of range");
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw ContractError("eps shape mismatch");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

DenoiserNet::DenoiserNet(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  embed_idx_ = params.add("cond.embed", rng.normal_matrix(cfg.token_dim, kVocabSize) * 0.5);
  std::vector<int> widths{cfg.state_dim + cfg.time_dim + cfg.token_dim};
  for (int i = 0; i < cfg.depth; ++i) widths.push_back(cfg.hidden);
  widths.push_back(cfg.state_dim);
  trunk_ = nn::Mlp(params, "trunk", widths, nn::Activation::silu, rng, 0.1);
}

DenoiserNet DenoiserNet::attach(const DenoiserConfig& cfg, nn::ParamStore params) {
  DenoiserNet n;
  n.cfg_ = cfg;
  n.params = std::move(params);
  n.bind();
  return n;
}

void DenoiserNet::bind() {
  embed_idx_ = params.index_of("cond.embed");
  std::vector<int> widths{cfg_.state_dim + cfg_.time_dim + cfg_.token_dim};
  for (int i = 0; i < cfg_.depth; ++i) widths.push_back(cfg_.hidden);
  widths.push_back(cfg_.state_dim);
  trunk_ = nn::Mlp::attach(params, "trunk", widths, nn::Activation::silu);
}

nn::Mat DenoiserNet::time_embedding(const std::vector<int>& t) const {
  const int half = cfg_.time_dim / 2;
  nn::Mat e(cfg_.time_dim, static_cast<Eigen::Index>(t.size()));
  for (std::size_t j = 0; j < t.size(); ++j)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(1000.0) * i / half);
      e(i, j) = std::sin(t[j] * freq);
      e(half + i, j) = std::cos(t[j] * freq);
    }
  return e;
}

nn::Mat DenoiserNet::forward(const nn::Mat& x_t, const std::vector<int>& t, const CondBatch& cond,
                             Cache* cache) const {
  const Eigen::Index b = x_t.cols();
  if (x_t.rows() != cfg_.state_dim) throw ContractError("denoiser state dimension mismatch");
  if (static_cast<Eigen::Index>(t.size()) != b || static_cast<Eigen::Index>(cond.size()) != b)
    throw ContractError("denoiser batch size mismatch");
  const nn::Mat& table = params.value(embed_idx_);
  nn::Mat in(cfg_.state_dim + cfg_.time_dim + cfg_.token_dim, b);
  in.topRows(cfg_.state_dim) = x_t;
  in.middleRows(cfg_.state_dim, cfg_.time_dim) = time_embedding(t);
  auto c = in.bottomRows(cfg_.token_dim);
  c.setZero();
  for (Eigen::Index j = 0; j < b; ++j) {
    if (!cond[j] || cond[j]->tokens.empty()) continue;
    for (int tok : cond[j]->tokens) {
      if (tok < 0 || tok >= kVocabSize) throw ContractError("token id out of vocabulary");
      c.col(j) += table.col(tok);
    }
    c.col(j) /= static_cast<double>(cond[j]->tokens.size());
  }
  if (cache) cache->cond = cond;
  return trunk_.forward(params, in, cache ? &cache->trunk : nullptr);
}

void DenoiserNet::backward(const Cache& cache, const nn::Mat& d_out, nn::Grads& grads) const {
  const nn::Mat d_in = trunk_.backward(params, cache.trunk, d_out, grads);
  auto dc = d_in.bottomRows(cfg_.token_dim);
  nn::Mat& dtable = grads[embed_idx_];
  for (Eigen::Index j = 0; j < d_in.cols(); ++j) {
    const TokenSeq* c = cache.cond[j];
    if (!c || c->tokens.empty()) continue;
    const double w = 1.0 / static_cast<double>(c->tokens.size());
    for (int tok : c->tokens) dtable.col(tok) += w * dc.col(j);
  }
}

std::vector<std::size_t> DenoiserNet::last_layer_tensors(int L) const {
  if (L < 1 || L > trunk_.layers()) throw ConfigError("last_layers L must be in [1, trunk layers]");
  std::vector<std::size_t> idx;
  for (int l = trunk_.layers() - L; l < trunk_.layers(); ++l) {
    idx.push_back(trunk_.weight_index(l));
    idx.push_back(trunk_.bias_index(l));
  }
  return idx;
}

double ddpm_loss(const DenoiserNet& net, const nn::Mat& x0, const CondBatch& cond, const std::vector<int>& t,
                 const nn::Mat& eps, const NoiseSchedule& sched, nn::Grads* grads) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw ContractError("eps shape mismatch");
  nn::Mat xt(x0.rows(), x0.cols());
  for (Eigen::Index j = 0; j < x0.cols(); ++j) xt.col(j) = q_sample(x0.col(j), t[j], eps.col(j), sched);
  DenoiserNet::Cache cache;
  const nn::Mat pred = net.forward(xt, t, cond, grads ? &cache : nullptr);
  const nn::Mat diff = pred - eps;
  const double n = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / n;
  if (!std::isfinite(loss)) throw NumericError("non-finite diffusion loss");
  if (grads) net.backward(cache, diff * (2.0 / n), *grads);
  return loss;
}

Eigen::VectorXd Generator::to_state(const MotionSequence& m) const {
  const MotionSequence r = m.frames() == frames ? m : resample(m, frames);
  const MotionMat z = norm.normalize(r);
  if (space == SpaceKind::raw) return Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
  const EncoderOutput enc = vae->encode(z);
  return (enc.mu - latent_shift).cwiseQuotient(latent_scale);
}

nn::Mat Generator::to_states(const std::vector<MotionSequence>& motions) const {
  nn::Mat s(state_dim(), static_cast<Eigen::Index>(motions.size()));
  for (std::size_t i = 0; i < motions.size(); ++i) s.col(static_cast<Eigen::Index>(i)) = to_state(motions[i]);
  return s;
}

MotionSequence Generator::from_state(const Eigen::VectorXd& state) const {
  if (state.size() != state_dim()) throw ContractError("state dimension mismatch");
  if (space == SpaceKind::raw) return norm.denormalize(unflatten(state, frames), fps);
  const LatentVector z{state.cwiseProduct(latent_scale) + latent_shift};
  return norm.denormalize(vae->decode(z, frames), fps);
}

std::vector<MotionSequence> Generator::from_states(const nn::Mat& states) const {
  std::vector<MotionSequence> out;
  out.reserve(static_cast<std::size_t>(states.cols()));
  if (space == SpaceKind::raw) {
    for (Eigen::Index j = 0; j < states.cols(); ++j) out.push_back(from_state(states.col(j)));
    return out;
  }
  const nn::Mat z = (states.array().colwise() * latent_scale.array()).colwise() + latent_shift.array();
  const nn::Mat x = vae->decode_batch(z);
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.push_back(norm.denormalize(unflatten(x.col(j), frames), fps));
  return out;
}

std::vector<Generator::Sample> Generator::sample(const std::vector<TokenSeq>& conds,
                                                 const std::vector<std::uint64_t>& seeds) const {
  return sample(conds, seeds, nullptr);
}

std::vector<Generator::Sample> Generator::sample(const std::vector<TokenSeq>& conds,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 std::vector<nn::Mat>* trace) const {
  if (conds.size() != seeds.size()) throw ContractError("one seed per condition required");
  const Eigen::Index b = static_cast<Eigen::Index>(conds.size());
  if (b == 0) return {};
  const int d = state_dim();
  std::vector<Rng> rngs;
  rngs.reserve(seeds.size());
  for (auto s : seeds) rngs.emplace_back(s);
  CondBatch cond;
  for (const auto& c : conds) cond.push_back(&c);

  nn::Mat x(d, b);
  for (Eigen::Index j = 0; j < b; ++j) x.col(j) = rngs[j].normal_vector(d);
  for (int t = sched.steps(); t >= 1; --t) {
    if (trace) trace->push_back(x);
    const nn::Mat eps_hat = net.forward(x, std::vector<int>(static_cast<std::size_t>(b), t), cond);
    const double beta = sched.beta(t);
    nn::Mat mean = (x - (beta / std::sqrt(1.0 - sched.alpha_bar(t))) * eps_hat) / std::sqrt(sched.alpha(t));
    if (t > 1) {
      const double sd = std::sqrt(beta);
      for (Eigen::Index j = 0; j < b; ++j) mean.col(j) += sd * rngs[j].normal_vector(d);
    }
    x = std::move(mean);
  }
  if (trace) trace->push_back(x);
  if (!x.allFinite()) throw NumericError("sampler produced non-finite state");

  const auto motions = from_states(x);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(b));
  for (Eigen::Index j = 0; j < b; ++j) out.push_back({motions[j], x.col(j)});
  return out;
}

Checkpoint Generator::to_checkpoint() const {
  Checkpoint c;
  auto& m = c.metadata;
  m["kind"] = "generator";
  m["space"] = to_string(space);
  m["frames"] = frames;
  m["fps"] = fps;
  m["schedule"] = {{"kind", to_string(sched.kind)},
                   {"T", sched.steps()},
                   {"beta_min", sched.beta_min},
                   {"beta_max", sched.beta_max}};
  const auto& dc = net.config();
  m["denoiser"] = {{"state_dim", dc.state_dim},
                   {"hidden", dc.hidden},
                   {"depth", dc.depth},
                   {"token_dim", dc.token_dim},
                   {"time_dim", dc.time_dim}};
  m["norm"] = {{"mean", std::vector<double>(norm.mean.data(), norm.mean.data() + norm.mean.size())},
               {"std", std::vector<double>(norm.std.data(), norm.std.data() + norm.std.size())}};
  if (space == SpaceKind::latent) {
    m["latent_shift"] = std::vector<double>(latent_shift.data(), latent_shift.data() + latent_shift.size());
    m["latent_scale"] = std::vector<double>(latent_scale.data(), latent_scale.data() + latent_scale.size());
  }
  for (const auto& t : net.params.tensors()) c.params.add("denoiser/" + t.name, t.value);
  if (vae) vae->write_to(c, "vae");
  return c;
}

Generator Generator::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("kind", "") != "generator") throw IntegrityError("checkpoint is not a generator");
  auto vec = [](const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  Generator g;
  g.space = space_from_string(m.at("space").get<std::string>());
  g.frames = m.at("frames").get<int>();
  g.fps = m.at("fps").get<int>();
  const auto& s = m.at("schedule");
  g.sched = make_schedule(schedule_kind_from_string(s.at("kind").get<std::string>()), s.at("T").get<int>(),
                          s.at("beta_min").get<double>(), s.at("beta_max").get<double>());
  DenoiserConfig dc;
  const auto& d = m.at("denoiser");
  dc.state_dim = d.at("state_dim").get<int>();
  dc.hidden = d.at("hidden").get<int>();
  dc.depth = d.at("depth").get<int>();
  dc.token_dim = d.at("token_dim").get<int>();
  dc.time_dim = d.at("time_dim").get<int>();
  g.norm.mean = vec(m.at("norm").at("mean"));
  g.norm.std = vec(m.at("norm").at("std"));
  nn::ParamStore ps;
  const std::string prefix = "denoiser/";
  for (const auto& t : ckpt.params.tensors())
    if (t.name.rfind(prefix, 0) == 0) ps.add(t.name.substr(prefix.size()), t.value);
  g.net = DenoiserNet::attach(dc, std::move(ps));
  if (g.space == SpaceKind::latent) {
    g.vae = Vae::from_checkpoint(ckpt, "vae");
    g.latent_shift = vec(m.at("latent_shift"));
    g.latent_scale = vec(m.at("latent_scale"));
  }
  return g;
}

DiffusionTrainResult train_diffusion(const MotionDataset& train, const DiffusionConfig& cfg, const Vae* vae) {
  if (train.records.empty()) throw ContractError("train split is empty");
  if (cfg.space == SpaceKind::latent && !vae) throw ContractError("latent diffusion requires a frozen VAE");

  DiffusionTrainResult res;
  Generator& g = res.generator;
  g.space = cfg.space;
  g.norm = train.norm;
  g.fps = train.records.front().motion.fps;
  g.frames = vae ? vae->frames() : train.records.front().motion.frames();
  g.sched = make_schedule(cfg.schedule, cfg.T, cfg.beta_min, cfg.beta_max);

  std::vector<MotionSequence> motions;
  motions.reserve(train.records.size());
  for (const auto& r : train.records) motions.push_back(r.motion);
  nn::Mat states;
  int state_dim = 0;
  if (cfg.space == SpaceKind::latent) {
    g.vae = *vae;
    state_dim = vae->latent_dim();
    g.latent_shift = Eigen::VectorXd::Zero(state_dim);
    g.latent_scale = Eigen::VectorXd::Ones(state_dim);
    // Identity standardization while collecting encoder means.
    states = g.to_states(motions);
    g.latent_shift = states.rowwise().mean();
    const nn::Mat centered = states.colwise() - g.latent_shift;
    g.latent_scale = (centered.array().square().rowwise().sum() / static_cast<double>(states.cols()))
                         .sqrt()
                         .max(1e-6)
                         .matrix();
    states = (centered.array().colwise() / g.latent_scale.array()).matrix();
  } else {
    state_dim = g.frames * kFeatures;
    states = g.to_states(motions);
  }

  DenoiserConfig dc;
  dc.state_dim = state_dim;
  dc.hidden = cfg.hidden;
  dc.depth = cfg.depth;
  g.net = DenoiserNet(dc, derive_seed(cfg.seed, {1}));

  std::vector<TokenSeq> tokens;
  tokens.reserve(train.records.size());
  for (const auto& r : train.records) tokens.push_back(render_tokens(r.prompt));

  Rng rng(derive_seed(cfg.seed, {2}));
  nn::Adam opt(g.net.params, {.lr = cfg.lr});
  nn::Grads grads(g.net.params);
  for (int step = 0; step < cfg.steps; ++step) {
    nn::Mat x0(state_dim, cfg.batch);
    std::vector<int> t(static_cast<std::size_t>(cfg.batch));
    CondBatch cond(static_cast<std::size_t>(cfg.batch));
    for (int j = 0; j < cfg.batch; ++j) {
      const auto i = rng.index(static_cast<std::size_t>(states.cols()));
      x0.col(j) = states.col(static_cast<Eigen::Index>(i));
      t[j] = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.T)));
      cond[j] = rng.bernoulli(cfg.cond_dropout) ? nullptr : &tokens[i];
    }
    const nn::Mat eps = rng.normal_matrix(state_dim, cfg.batch);
    grads.zero();
    double loss = 0;
    try {
      loss = ddpm_loss(g.net, x0, cond, t, eps, g.sched, &grads);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("diffusion training diverged: ") + e.what(), step);
    }
    if (!grads.all_finite()) throw TrainingError("diffusion gradient non-finite", step);
    opt.step(g.net.params, grads);
    res.loss_history.push_back(loss);
  }
  return res;
}

}  // namespace mdpo
