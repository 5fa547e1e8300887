#include "mdpo/ranker.hpp"

#include "mdpo/error.hpp"
#include "mdpo/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mdpo {

JointEmbedder::JointEmbedder(const RankerConfig& cfg, const NormStats& norm, std::uint64_t seed)
    : cfg_(cfg), norm_(norm) {
  Rng rng(seed);
  embed_idx_ = params.add("text.embed", rng.normal_matrix(cfg.token_dim, kVocabSize));
  text_mlp_ = nn::Mlp(params, "text", {cfg.token_dim, cfg.text_hidden, cfg.embed_dim}, nn::Activation::silu, rng);
  motion_mlp_ = nn::Mlp(params, "motion", {cfg.frames * kFeatures, cfg.motion_hidden, cfg.embed_dim},
                        nn::Activation::silu, rng);
}

void JointEmbedder::bind() {
  embed_idx_ = params.index_of("text.embed");
  text_mlp_ = nn::Mlp::attach(params, "text", {cfg_.token_dim, cfg_.text_hidden, cfg_.embed_dim}, nn::Activation::silu);
  motion_mlp_ = nn::Mlp::attach(params, "motion", {cfg_.frames * kFeatures, cfg_.motion_hidden, cfg_.embed_dim},
                                nn::Activation::silu);
}

nn::Mat JointEmbedder::pooled_tokens(const std::vector<TokenSeq>& tokens) const {
  const nn::Mat& table = params.value(embed_idx_);
  nn::Mat p = nn::Mat::Zero(cfg_.token_dim, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j].tokens.empty()) throw ContractError("empty token sequence");
    for (int tok : tokens[j].tokens) {
      if (tok < 0 || tok >= kVocabSize) throw ContractError("token id out of vocabulary");
      p.col(static_cast<Eigen::Index>(j)) += table.col(tok);
    }
    p.col(static_cast<Eigen::Index>(j)) /= static_cast<double>(tokens[j].tokens.size());
  }
  return p;
}

nn::Mat JointEmbedder::motion_inputs(const std::vector<MotionSequence>& motions) const {
  std::vector<MotionMat> z;
  z.reserve(motions.size());
  for (const auto& m : motions) {
    if (m.data.cols() != kFeatures) throw ContractError("motion must have " + std::to_string(kFeatures) + " features");
    z.push_back(norm_.normalize(m.frames() == cfg_.frames ? m : resample(m, cfg_.frames)));
  }
  return flatten_batch(z);
}

nn::Mat JointEmbedder::embed_texts(const std::vector<TokenSeq>& tokens) const {
  return nn::normalize_columns(text_mlp_.forward(params, pooled_tokens(tokens)));
}

nn::Mat JointEmbedder::embed_motions(const std::vector<MotionSequence>& motions) const {
  return nn::normalize_columns(motion_mlp_.forward(params, motion_inputs(motions)));
}

Eigen::VectorXd JointEmbedder::embed_text(const TokenSeq& tokens) const { return embed_texts({tokens}).col(0); }

Eigen::VectorXd JointEmbedder::embed_motion(const MotionSequence& motion) const {
  return embed_motions({motion}).col(0);
}

double JointEmbedder::contrastive_loss(const std::vector<TokenSeq>& tokens, const nn::Mat& motion_x,
                                       nn::Grads* grads) const {
  const Eigen::Index b = motion_x.cols();
  if (static_cast<Eigen::Index>(tokens.size()) != b) throw ContractError("contrastive batch mismatch");
  const double tau = cfg_.temperature;

  const nn::Mat pooled = pooled_tokens(tokens);
  nn::Mlp::Cache tc, mc;
  nn::Vec tn, mn;
  const nn::Mat traw = text_mlp_.forward(params, pooled, grads ? &tc : nullptr);
  const nn::Mat mraw = motion_mlp_.forward(params, motion_x, grads ? &mc : nullptr);
  const nn::Mat te = nn::normalize_columns(traw, &tn);
  const nn::Mat me = nn::normalize_columns(mraw, &mn);

  const nn::Mat s = te.transpose() * me / tau;  // rows: texts, cols: motions
  nn::Mat target = nn::Mat::Zero(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    int count = 0;
    for (Eigen::Index j = 0; j < b; ++j) count += tokens[i] == tokens[j];
    for (Eigen::Index j = 0; j < b; ++j)
      if (tokens[i] == tokens[j]) target(i, j) = 1.0 / count;
  }
  auto softmax_rows = [](const nn::Mat& x, nn::Mat& logp) {
    logp = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mx = x.row(i).maxCoeff();
      const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
      logp.row(i).array() -= lse;
    }
    return nn::Mat(logp.array().exp());
  };
  nn::Mat logp_r, logp_c;
  const nn::Mat p_r = softmax_rows(s, logp_r);
  const nn::Mat p_c = softmax_rows(s.transpose(), logp_c);  // rows: motions
  const double loss =
      -0.5 * ((target.array() * logp_r.array()).sum() + (target.transpose().array() * logp_c.array()).sum()) /
      static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericError("non-finite contrastive loss");

  if (grads) {
    const nn::Mat ds = 0.5 * ((p_r - target) + (p_c - target.transpose()).transpose()) / static_cast<double>(b);
    const nn::Mat dte = me * ds.transpose() / tau;
    const nn::Mat dme = te * ds / tau;
    const nn::Mat dpooled =
        text_mlp_.backward(params, tc, nn::normalize_columns_backward(te, tn, dte), *grads);
    motion_mlp_.backward(params, mc, nn::normalize_columns_backward(me, mn, dme), *grads);
    nn::Mat& dtable = (*grads)[embed_idx_];
    for (Eigen::Index j = 0; j < b; ++j) {
      const double w = 1.0 / static_cast<double>(tokens[j].tokens.size());
      for (int tok : tokens[j].tokens) dtable.col(tok) += w * dpooled.col(j);
    }
  }
  return loss;
}

Checkpoint JointEmbedder::to_checkpoint() const {
  Checkpoint c;
  auto& m = c.metadata;
  m["kind"] = "ranker";
  m["embed_dim"] = cfg_.embed_dim;
  m["token_dim"] = cfg_.token_dim;
  m["text_hidden"] = cfg_.text_hidden;
  m["motion_hidden"] = cfg_.motion_hidden;
  m["frames"] = cfg_.frames;
  m["temperature"] = cfg_.temperature;
  m["norm"] = {{"mean", std::vector<double>(norm_.mean.data(), norm_.mean.data() + norm_.mean.size())},
               {"std", std::vector<double>(norm_.std.data(), norm_.std.data() + norm_.std.size())}};
  c.params = params;
  return c;
}

JointEmbedder JointEmbedder::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  if (m.value("kind", "") != "ranker") throw IntegrityError("checkpoint is not a ranker");
  JointEmbedder e;
  e.cfg_.embed_dim = m.at("embed_dim").get<int>();
  e.cfg_.token_dim = m.at("token_dim").get<int>();
  e.cfg_.text_hidden = m.at("text_hidden").get<int>();
  e.cfg_.motion_hidden = m.at("motion_hidden").get<int>();
  e.cfg_.frames = m.at("frames").get<int>();
  e.cfg_.temperature = m.at("temperature").get<double>();
  const auto mean = m.at("norm").at("mean").get<std::vector<double>>();
  const auto sd = m.at("norm").at("std").get<std::vector<double>>();
  e.norm_.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  e.norm_.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  e.params = ckpt.params;
  e.bind();
  return e;
}

RankerTrainResult train_ranker(const MotionDataset& train, const RankerConfig& cfg) {
  if (train.records.size() < 2) throw ContractError("ranker training needs at least 2 prompts");
  RankerTrainResult res{JointEmbedder(cfg, train.norm, derive_seed(cfg.seed, {1})), {}};
  JointEmbedder& e = res.embedder;

  std::vector<MotionSequence> motions;
  std::vector<TokenSeq> tokens;
  for (const auto& r : train.records) {
    motions.push_back(r.motion);
    tokens.push_back(render_tokens(r.prompt));
  }
  const nn::Mat all = e.motion_inputs(motions);
  const std::size_t n = motions.size();
  const int batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n));

  Rng rng(derive_seed(cfg.seed, {2}));
  nn::Adam opt(e.params, {.lr = cfg.lr});
  nn::Grads grads(e.params);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  for (int step = 0; step < cfg.steps; ++step) {
    nn::Mat x(all.rows(), batch);
    std::vector<TokenSeq> bt;
    for (int j = 0; j < batch; ++j) {
      if (cursor >= n) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      const auto i = order[cursor++];
      x.col(j) = all.col(static_cast<Eigen::Index>(i));
      bt.push_back(tokens[i]);
    }
    grads.zero();
    double loss = 0;
    try {
      loss = e.contrastive_loss(bt, x, &grads);
    } catch (const NumericError& ex) {
      throw TrainingError(std::string("ranker training diverged: ") + ex.what(), step);
    }
    opt.step(e.params, grads);
    res.loss_history.push_back(loss);
  }
  return res;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ContractError("cosine similarity needs equal lengths");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double score(const TokenSeq& tokens, const MotionSequence& motion, const JointEmbedder& embedder) {
  return cosine_similarity(embedder.embed_text(tokens), embedder.embed_motion(motion));
}

namespace {

constexpr double kSpeedRange = kSpeedMax - kSpeedMin;
constexpr double kAmplitudeRange = kAmplitudeMax - kAmplitudeMin;
constexpr double kCurvatureWeight = 0.2;
constexpr double kResidualRef = 0.02;

bool uses_path_curvature(Action a) { return a == Action::walk || a == Action::circle; }

double expected_curvature(const PromptSpec& p) { return p.action == Action::circle ? 1.0 / p.amplitude : 0.0; }

}  // namespace

OracleJudgement oracle_judge(const PromptSpec& prompt, const MotionSequence& motion) {
  validate(prompt);
  OracleJudgement j;
  j.fit = fit_family(prompt.action, motion);
  j.realism_residual = j.fit.residual;
  if (prompt.action != Action::stand) {
    j.attribute_mismatch = std::abs(j.fit.speed - prompt.speed) / kSpeedRange +
                           std::abs(j.fit.amplitude - prompt.amplitude) / kAmplitudeRange;
    if (uses_path_curvature(prompt.action))
      j.attribute_mismatch +=
          std::min(2.0, kCurvatureWeight * std::abs(j.fit.path_curvature - expected_curvature(prompt)));
  }
  j.score = -(j.realism_residual + j.attribute_mismatch);
  if (!std::isfinite(j.score)) j.score = -1e6;
  return j;
}

double oracle_score(const PromptSpec& prompt, const MotionSequence& motion) {
  return oracle_judge(prompt, motion).score;
}

Eigen::VectorXd oracle_features(const PromptSpec& prompt, const MotionSequence& motion) {
  const OracleJudgement j = oracle_judge(prompt, motion);
  auto clip = [](double v, double lo, double hi) { return std::isfinite(v) ? std::clamp(v, lo, hi) : hi; };
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kOracleFeatureDim);
  if (prompt.action != Action::stand) {
    f(0) = clip((j.fit.speed - prompt.speed) / kSpeedRange, -5, 5);
    f(1) = clip((j.fit.amplitude - prompt.amplitude) / kAmplitudeRange, -5, 5);
    if (uses_path_curvature(prompt.action))
      f(2) = clip(kCurvatureWeight * (j.fit.path_curvature - expected_curvature(prompt)), -5, 5);
  }
  f(3) = clip(std::log(std::max(j.realism_residual, 1e-12) / kResidualRef), -3, 6);
  return f;
}

const char* to_string(ScorerKind k) { return k == ScorerKind::learned ? "learned" : "oracle"; }

ScorerKind scorer_from_string(std::string_view s) {
  if (s == "learned") return ScorerKind::learned;
  if (s == "oracle") return ScorerKind::oracle;
  throw ConfigError("unknown scorer: " + std::string(s));
}

std::vector<double> LearnedScorer::score(const PromptSpec&, const TokenSeq& tokens,
                                         const std::vector<MotionSequence>& motions) const {
  const Eigen::VectorXd t = embedder_->embed_text(tokens);
  const nn::Mat m = embedder_->embed_motions(motions);
  std::vector<double> s(motions.size());
  for (std::size_t i = 0; i < motions.size(); ++i) s[i] = cosine_similarity(t, m.col(static_cast<Eigen::Index>(i)));
  return s;
}

std::vector<double> OracleScorer::score(const PromptSpec& prompt, const TokenSeq&,
                                        const std::vector<MotionSequence>& motions) const {
  std::vector<double> s;
  s.reserve(motions.size());
  for (const auto& m : motions) s.push_back(oracle_score(prompt, m));
  return s;
}

std::vector<ScoredCandidate> order_candidates(const std::vector<double>& scores,
                                              const std::vector<GeneratorTag>& tags) {
  if (scores.size() != tags.size()) throw ContractError("one tag per score required");
  std::vector<ScoredCandidate> c;
  c.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ContractError("candidate score must be finite");
    c.push_back({static_cast<int>(i), scores[i], tags[i]});
  }
  std::stable_sort(c.begin(), c.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.generator_tag != b.generator_tag) return a.generator_tag < b.generator_tag;
    return a.motion_index < b.motion_index;
  });
  return c;
}

RankedSet rank(const PromptSpec& prompt, const TokenSeq& tokens, std::vector<MotionSequence> motions,
               const std::vector<GeneratorTag>& tags, const Scorer& scorer) {
  if (motions.size() < 2) throw ContractError("ranking needs at least 2 candidates");
  RankedSet rs;
  rs.prompt_id = prompt.prompt_id;
  rs.candidates = order_candidates(scorer.score(prompt, tokens, motions), tags);
  rs.motions = std::move(motions);
  return rs;
}

}  // namespace mdpo
