#include "mdpo/dpo.hpp"

#include "mdpo/error.hpp"

#include <algorithm>
#include <cmath>

namespace mdpo {

using nlohmann::json;

std::string to_string(const FreezePolicy& p) {
  return p.kind == FreezeKind::denoiser_only ? "denoiser_only" : "last_layers(" + std::to_string(p.L) + ")";
}

FreezePolicy freeze_policy_from_string(std::string_view s) {
  if (s == "denoiser_only") return {FreezeKind::denoiser_only, 0};
  constexpr std::string_view prefix = "last_layers(";
  if (s.starts_with(prefix) && s.ends_with(")")) {
    const std::string num(s.substr(prefix.size(), s.size() - prefix.size() - 1));
    try {
      std::size_t pos = 0;
      const int L = std::stoi(num, &pos);
      if (pos == num.size()) return {FreezeKind::last_layers, L};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown freeze policy: " + std::string(s));
}

void AlignmentConfig::validate() const {
  if (!(beta_dpo > 0)) throw ConfigError("beta_dpo must be positive");
  if (!(gt_p >= 0 && gt_p <= 1)) throw ConfigError("GT_p must be in [0, 1]");
  if (online_K < 2) throw ConfigError("online_K must be at least 2");
  if (freeze.kind == FreezeKind::last_layers && freeze.L < 1) throw ConfigError("last_layers needs L >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (inner_iterations < 1) throw ConfigError("inner_iterations must be at least 1");
}

std::size_t FreezeMask::trainable_count() const {
  return static_cast<std::size_t>(std::count(trainable.begin(), trainable.end(), true));
}

FreezeMask apply_freeze(const Generator& target, const FreezePolicy& policy) {
  FreezeMask m;
  const std::size_t n = target.net.params.size();
  if (policy.kind == FreezeKind::denoiser_only) {
    if (target.space != SpaceKind::latent) throw ConfigError("denoiser_only freezing requires a latent-space model");
    m.trainable.assign(n, true);
    return m;
  }
  m.trainable.assign(n, false);
  for (std::size_t i : target.net.last_layer_tensors(policy.L)) m.trainable[i] = true;
  return m;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

DpoLoss dpo_diffusion_loss(const DenoiserNet& target, const DenoiserNet& reference, const DpoBatch& batch,
                           const NoiseSchedule& sched, double beta_eff, nn::Grads* grads) {
  const Eigen::Index b = batch.x_w.cols();
  const Eigen::Index d = batch.x_w.rows();
  if (b == 0) throw ContractError("empty preference batch");
  if (batch.x_l.rows() != d || batch.x_l.cols() != b || batch.eps_w.rows() != d || batch.eps_w.cols() != b ||
      batch.eps_l.rows() != d || batch.eps_l.cols() != b)
    throw ContractError("preference batch shape mismatch");
  if (d != target.config().state_dim || d != reference.config().state_dim)
    throw ContractError("preference states do not live in the target's diffusion space");
  if (static_cast<Eigen::Index>(batch.t.size()) != b || static_cast<Eigen::Index>(batch.cond.size()) != b)
    throw ContractError("preference batch metadata mismatch");

  nn::Mat xt(d, 2 * b);
  nn::Mat eps(d, 2 * b);
  std::vector<int> tt(static_cast<std::size_t>(2 * b));
  CondBatch cond(static_cast<std::size_t>(2 * b));
  for (Eigen::Index j = 0; j < b; ++j) {
    const int t = batch.t[static_cast<std::size_t>(j)];
    xt.col(j) = q_sample(batch.x_w.col(j), t, batch.eps_w.col(j), sched);
    xt.col(b + j) = q_sample(batch.x_l.col(j), t, batch.eps_l.col(j), sched);
    eps.col(j) = batch.eps_w.col(j);
    eps.col(b + j) = batch.eps_l.col(j);
    tt[static_cast<std::size_t>(j)] = tt[static_cast<std::size_t>(b + j)] = t;
    cond[static_cast<std::size_t>(j)] = cond[static_cast<std::size_t>(b + j)] = &batch.cond[static_cast<std::size_t>(j)];
  }

  DenoiserNet::Cache cache;
  const nn::Mat pred = target.forward(xt, tt, cond, grads ? &cache : nullptr);
  const nn::Mat pred_ref = reference.forward(xt, tt, cond);
  const nn::Mat res = eps - pred;
  const Eigen::RowVectorXd e_theta = res.colwise().squaredNorm() / static_cast<double>(d);
  const Eigen::RowVectorXd e_ref = (eps - pred_ref).colwise().squaredNorm() / static_cast<double>(d);

  DpoLoss out;
  out.brackets.resize(static_cast<std::size_t>(b));
  double acc = 0, loss = 0;
  Eigen::VectorXd dl_dbracket(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double br = (e_theta(j) - e_ref(j)) - (e_theta(b + j) - e_ref(b + j));
    out.brackets[static_cast<std::size_t>(j)] = br;
    loss += softplus(beta_eff * br);
    acc += br < 0 ? 1.0 : 0.0;
    dl_dbracket(j) = beta_eff * sigmoid(beta_eff * br) / static_cast<double>(b);
  }
  out.loss = loss / static_cast<double>(b);
  out.implicit_accuracy = acc / static_cast<double>(b);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite preference loss");

  if (grads) {
    nn::Mat d_pred(d, 2 * b);
    const double k = -2.0 / static_cast<double>(d);
    for (Eigen::Index j = 0; j < b; ++j) {
      d_pred.col(j) = (dl_dbracket(j) * k) * res.col(j);
      d_pred.col(b + j) = (-dl_dbracket(j) * k) * res.col(b + j);
    }
    target.backward(cache, d_pred, *grads);
  }
  return out;
}

double dpo_diffusion_loss(const DenoiserNet& target, const DenoiserNet& reference, const Eigen::VectorXd& winner,
                          const Eigen::VectorXd& loser, const TokenSeq& cond, int t, const Eigen::VectorXd& eps_w,
                          const Eigen::VectorXd& eps_l, const NoiseSchedule& sched, double beta_eff) {
  DpoBatch b{winner, loser, eps_w, eps_l, {t}, {cond}};
  return dpo_diffusion_loss(target, reference, b, sched, beta_eff).loss;
}

namespace {

struct PairStates {
  Eigen::VectorXd w, l;
  TokenSeq cond;
};

Eigen::VectorXd candidate_state(const Generator& g, const PamRecord& rec, int motion_index) {
  const auto& z = rec.latents.at(static_cast<std::size_t>(motion_index));
  const GeneratorTag tag = [&] {
    for (const auto& c : rec.ranked.candidates)
      if (c.motion_index == motion_index) return c.generator_tag;
    throw ContractError("motion index missing from ranked set");
  }();
  if (g.space == SpaceKind::latent && tag == GeneratorTag::latent && z) return *z;
  return g.to_state(rec.ranked.motions.at(static_cast<std::size_t>(motion_index)));
}

RankedSet restrict_to(const RankedSet& rs, GeneratorTag tag) {
  RankedSet out;
  out.prompt_id = rs.prompt_id;
  for (const auto& c : rs.candidates)
    if (c.generator_tag == tag) out.candidates.push_back(c);
  return out;
}

class Trainer {
 public:
  Trainer(const Generator& base, const AlignmentConfig& cfg)
      : cfg_(cfg), reference_(base.net), result_{base, {}, json::object()}, mask_(apply_freeze(base, cfg.freeze)),
        grads_(base.net.params), opt_(base.net.params, cfg.learning_rate, cfg.momentum),
        beta_eff_(cfg.beta_dpo * base.sched.steps()) {}

  Generator& target() { return result_.aligned; }

  void step(int s, const std::vector<PairStates>& pairs, Rng& rng) {
    const Generator& g = result_.aligned;
    const int d = g.state_dim();
    DpoBatch batch;
    const Eigen::Index b = static_cast<Eigen::Index>(pairs.size());
    batch.x_w.resize(d, b);
    batch.x_l.resize(d, b);
    batch.eps_w.resize(d, b);
    batch.eps_l.resize(d, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto& p = pairs[static_cast<std::size_t>(j)];
      batch.x_w.col(j) = p.w;
      batch.x_l.col(j) = p.l;
      batch.t.push_back(1 + static_cast<int>(rng.index(static_cast<std::size_t>(g.sched.steps()))));
      batch.eps_w.col(j) = rng.normal_vector(d);
      batch.eps_l.col(j) = rng.normal_vector(d);
      batch.cond.push_back(p.cond);
    }
    AlignLogEntry entry{s, 0, 0, cfg_.learning_rate};
    for (int it = 0; it < cfg_.inner_iterations; ++it) {
      grads_.zero();
      DpoLoss l;
      try {
        l = dpo_diffusion_loss(result_.aligned.net, reference_, batch, g.sched, beta_eff_, &grads_);
      } catch (const NumericError& e) {
        throw TrainingError(std::string("alignment diverged: ") + e.what(), s);
      }
      if (!grads_.all_finite()) throw TrainingError("alignment produced non-finite gradients", s);
      if (it == 0) {
        entry.loss = l.loss;
        entry.implicit_accuracy = l.implicit_accuracy;
      }
      opt_.step(result_.aligned.net.params, grads_, &mask_.trainable);
    }
    result_.log.push_back(entry);
  }

  AlignResult finish(const char* mode, const AlignProvenance& prov) {
    result_.provenance = {{"mode", mode},
                          {"base_checkpoint", prov.base_checkpoint},
                          {"pam_hash", prov.pam_hash},
                          {"alignment", to_json(cfg_)}};
    return std::move(result_);
  }

 private:
  AlignmentConfig cfg_;
  DenoiserNet reference_;
  AlignResult result_;
  FreezeMask mask_;
  nn::Grads grads_;
  nn::Sgd opt_;
  double beta_eff_;
};

const MotionSequence* gt_for(const GtSource& gt, std::int64_t id) {
  auto it = gt.find(id);
  return it == gt.end() ? nullptr : &it->second;
}

PairStates resolve(const Generator& g, const PreferencePair& p, const PamRecord* rec,
                   const std::vector<Eigen::VectorXd>* online_states) {
  PairStates s;
  s.cond = p.tokens;
  auto state_of = [&](int idx) -> Eigen::VectorXd {
    if (online_states) return (*online_states)[static_cast<std::size_t>(idx)];
    return candidate_state(g, *rec, idx);
  };
  s.w = p.gt_substituted ? g.to_state(*p.gt_winner) : state_of(p.winner);
  s.l = state_of(p.loser);
  return s;
}

}  // namespace

AlignResult align_offline(const Generator& base, const PamDataset& pam, const GtSource& gt,
                          const AlignmentConfig& cfg, const AlignProvenance& prov) {
  cfg.validate();
  if (pam.records.empty()) throw ContractError("preference dataset is empty");
  if (cfg.gt_p > 0)
    for (const auto& r : pam.records)
      if (!gt_for(gt, r.prompt.prompt_id))
        throw ContractError("missing ground truth for prompt " + std::to_string(r.prompt.prompt_id));
  Trainer tr(base, cfg);

  // Candidate pools per record (all generators, or only the target's own).
  std::vector<RankedSet> pools;
  for (const auto& r : pam.records) {
    pools.push_back(cfg.pam_plus ? RankedSet{r.ranked.prompt_id, r.ranked.candidates, {}}
                                 : restrict_to(r.ranked, base.tag()));
    if (pools.back().candidates.size() < 2)
      throw ContractError("prompt " + std::to_string(r.prompt.prompt_id) + " has fewer than 2 usable candidates");
  }

  Rng rng(derive_seed(cfg.seed, {0x4f46}));
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<PairStates> pairs;
    for (int j = 0; j < cfg.batch; ++j) {
      const std::size_t ri = rng.index(pam.records.size());
      const PamRecord& rec = pam.records[ri];
      PreferencePair p = select_pair(pools[ri], cfg.selection, rng);
      p.tokens = rec.tokens;
      if (cfg.gt_p > 0) p = maybe_substitute_gt(std::move(p), *gt_for(gt, rec.prompt.prompt_id), cfg.gt_p, rng);
      pairs.push_back(resolve(tr.target(), p, &rec, nullptr));
    }
    tr.step(s, pairs, rng);
  }
  return tr.finish("offline", prov);
}

AlignResult align_online(const Generator& base, const std::vector<PromptSpec>& prompts, const Scorer& scorer,
                         const GtSource& gt, const AlignmentConfig& cfg, const AlignProvenance& prov) {
  cfg.validate();
  if (prompts.empty()) throw ContractError("online alignment needs prompts");
  const Generator& reference = base;
  Trainer tr(base, cfg);
  Rng rng(derive_seed(cfg.seed, {0x4f4e}));
  const std::uint64_t gen_seed = derive_seed(cfg.seed, {0x47454e});
  const std::size_t k = static_cast<std::size_t>(cfg.online_K);

  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<const PromptSpec*> chosen;
    std::vector<TokenSeq> conds;
    std::vector<std::uint64_t> seeds;
    for (int j = 0; j < cfg.batch; ++j) {
      const PromptSpec& p = prompts[rng.index(prompts.size())];
      chosen.push_back(&p);
      const TokenSeq tok = render_tokens(p);
      for (std::size_t i = 0; i < k; ++i) {
        conds.push_back(tok);
        seeds.push_back(derive_seed(gen_seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(j), i}));
      }
    }
    std::vector<Generator::Sample> samples;
    try {
      samples = reference.sample(conds, seeds);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("online generation failed: ") + e.what(), s);
    }
    std::vector<PairStates> pairs;
    for (int j = 0; j < cfg.batch; ++j) {
      std::vector<MotionSequence> motions;
      std::vector<Eigen::VectorXd> states;
      for (std::size_t i = 0; i < k; ++i) {
        auto& smp = samples[static_cast<std::size_t>(j) * k + i];
        motions.push_back(std::move(smp.motion));
        states.push_back(std::move(smp.state));
      }
      const PromptSpec& p = *chosen[static_cast<std::size_t>(j)];
      const TokenSeq& tok = conds[static_cast<std::size_t>(j) * k];
      const RankedSet rs = rank(p, tok, std::move(motions), std::vector<GeneratorTag>(k, reference.tag()), scorer);
      PreferencePair pair = select_pair_stochastic(rs, rng);
      pair.tokens = tok;
      pair.online = true;
      if (cfg.gt_p > 0) {
        const MotionSequence* g = gt_for(gt, p.prompt_id);
        if (!g) throw ContractError("missing ground truth for prompt " + std::to_string(p.prompt_id));
        pair = maybe_substitute_gt(std::move(pair), *g, cfg.gt_p, rng);
      }
      pairs.push_back(resolve(tr.target(), pair, nullptr, &states));
    }
    tr.step(s, pairs, rng);
  }
  return tr.finish("online", prov);
}

std::string serialize_log(const std::vector<AlignLogEntry>& log) {
  std::string out;
  for (const auto& e : log)
    out += json{{"step", e.step}, {"loss", e.loss}, {"implicit_accuracy", e.implicit_accuracy}, {"lr", e.lr}}.dump() +
           "\n";
  return out;
}

json to_json(const AlignmentConfig& c) {
  return {{"beta_dpo", c.beta_dpo},
          {"selection", to_string(c.selection)},
          {"gt_p", c.gt_p},
          {"online", c.online},
          {"online_K", c.online_K},
          {"pam_plus", c.pam_plus},
          {"freeze_policy", to_string(c.freeze)},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"steps", c.steps},
          {"batch", c.batch},
          {"inner_iterations", c.inner_iterations},
          {"seed", c.seed}};
}

}  // namespace mdpo
