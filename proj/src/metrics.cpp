#include "mdpo/metrics.hpp"

#include "mdpo/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace mdpo {

using nlohmann::json;

EmbeddingStats embedding_stats(const nn::Mat& x) {
  const Eigen::Index d = x.rows(), n = x.cols();
  if (n < d + 1) throw ContractError("embedding stats need at least dim + 1 samples");
  EmbeddingStats s;
  s.n = static_cast<int>(n);
  s.mean = x.rowwise().mean();
  const nn::Mat c = x.colwise() - s.mean;
  s.cov = c * c.transpose() / static_cast<double>(n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

EmbeddingStats embedding_stats(const std::vector<MotionSequence>& motions, const JointEmbedder& embedder) {
  return embedding_stats(embedder.embed_motions(motions));
}

namespace {

nn::Mat psd_sqrt(const nn::Mat& a) {
  Eigen::SelfAdjointEigenSolver<nn::Mat> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const EmbeddingStats& a, const EmbeddingStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) throw ContractError("FID dimension mismatch");
  const nn::Mat ra = psd_sqrt(a.cov);
  const nn::Mat m = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<nn::Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, v);
}

namespace {

std::vector<std::vector<std::size_t>> form_pools(const std::vector<TokenSeq>& tokens, int pool_size,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> remaining(tokens.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  Rng rng(seed);
  std::shuffle(remaining.begin(), remaining.end(), rng.engine());
  std::vector<std::vector<std::size_t>> pools;
  while (remaining.size() >= static_cast<std::size_t>(pool_size)) {
    std::vector<std::size_t> pool, rest;
    std::set<std::vector<int>> seen;
    for (std::size_t i : remaining) {
      if (static_cast<int>(pool.size()) < pool_size && seen.insert(tokens[i].tokens).second)
        pool.push_back(i);
      else
        rest.push_back(i);
    }
    if (static_cast<int>(pool.size()) < pool_size) break;
    pools.push_back(std::move(pool));
    remaining = std::move(rest);
  }
  return pools;
}

}  // namespace

RPrecision r_precision(const nn::Mat& text_emb, const nn::Mat& motion_emb, const std::vector<TokenSeq>& tokens,
                       int pool_size, std::uint64_t seed) {
  if (text_emb.cols() != motion_emb.cols() || static_cast<std::size_t>(text_emb.cols()) != tokens.size())
    throw ContractError("R-precision inputs must be aligned pairs");
  if (pool_size < 1) throw ContractError("pool size must be positive");
  const auto pools = form_pools(tokens, pool_size, seed);
  if (pools.empty())
    throw ContractError("not enough distinct prompts for an R-precision pool of " + std::to_string(pool_size));
  RPrecision r;
  r.pools = static_cast<int>(pools.size());
  double hits[3] = {0, 0, 0};
  double total = 0;
  for (const auto& pool : pools) {
    for (std::size_t a : pool) {
      const double own = (text_emb.col(static_cast<Eigen::Index>(a)) - motion_emb.col(static_cast<Eigen::Index>(a))).norm();
      int better = 0;
      for (std::size_t b : pool)
        if (b != a &&
            (text_emb.col(static_cast<Eigen::Index>(b)) - motion_emb.col(static_cast<Eigen::Index>(a))).norm() < own)
          ++better;
      for (int k = 0; k < 3; ++k) hits[k] += better <= k ? 1.0 : 0.0;
      total += 1;
    }
  }
  r.top1 = hits[0] / total;
  r.top2 = hits[1] / total;
  r.top3 = hits[2] / total;
  return r;
}

double r_precision(const nn::Mat& text_emb, const nn::Mat& motion_emb, const std::vector<TokenSeq>& tokens, int k,
                   int pool_size, std::uint64_t seed) {
  if (k < 1 || k > 3) throw ContractError("R-precision k must be 1, 2 or 3");
  const RPrecision r = r_precision(text_emb, motion_emb, tokens, pool_size, seed);
  return k == 1 ? r.top1 : k == 2 ? r.top2 : r.top3;
}

double mm_dist(const nn::Mat& text_emb, const nn::Mat& motion_emb) {
  if (text_emb.cols() != motion_emb.cols() || text_emb.rows() != motion_emb.rows())
    throw ContractError("MM-Dist inputs must be aligned pairs");
  if (text_emb.cols() == 0) throw ContractError("MM-Dist needs at least one pair");
  return (text_emb - motion_emb).colwise().norm().mean();
}

namespace {

// Mean distance over `n_pairs` seeded distinct-index pairs, or over every pair
// when that is no more than requested.
double mean_pair_distance(const nn::Mat& x, int n_pairs, std::uint64_t seed) {
  const Eigen::Index n = x.cols();
  const double all_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  double sum = 0;
  if (static_cast<double>(n_pairs) >= all_pairs) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) sum += (x.col(i) - x.col(j)).norm();
    return sum / all_pairs;
  }
  Rng rng(seed);
  for (int p = 0; p < n_pairs; ++p) {
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n - 1)));
    if (j >= i) ++j;
    sum += (x.col(i) - x.col(j)).norm();
  }
  return sum / n_pairs;
}

}  // namespace

double diversity(const nn::Mat& motion_emb, int n_pairs, std::uint64_t seed) {
  if (motion_emb.cols() < 2) throw ContractError("diversity needs at least 2 motions");
  if (n_pairs < 1) throw ContractError("diversity needs at least one pair");
  return mean_pair_distance(motion_emb, n_pairs, seed);
}

double multimodality(const std::vector<EmbeddingGroup>& groups, int draws_per_prompt, std::uint64_t seed) {
  if (groups.empty()) throw ContractError("multimodality needs at least one group");
  if (draws_per_prompt < 1) throw ContractError("multimodality needs at least one draw");
  double sum = 0;
  for (const auto& g : groups) {
    if (g.emb.cols() < 2) throw ContractError("multimodality needs at least 2 generations per prompt");
    sum += mean_pair_distance(g.emb, draws_per_prompt, derive_seed(seed, {static_cast<std::uint64_t>(g.key)}));
  }
  return sum / static_cast<double>(groups.size());
}

double oracle_fid(const std::vector<PromptSpec>& gen_prompts, const std::vector<MotionSequence>& gen,
                  const std::vector<PromptSpec>& real_prompts, const std::vector<MotionSequence>& real) {
  if (gen_prompts.size() != gen.size() || real_prompts.size() != real.size())
    throw ContractError("oracle FID needs one prompt per motion");
  auto features = [](const std::vector<PromptSpec>& p, const std::vector<MotionSequence>& m) {
    nn::Mat f(kOracleFeatureDim, static_cast<Eigen::Index>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = oracle_features(p[i], m[i]);
    return f;
  };
  return fid(embedding_stats(features(gen_prompts, gen)), embedding_stats(features(real_prompts, real)));
}

// ---- reports ----

json EvalReport::to_json() const {
  auto mv = [](const MetricValue& m) { return json{{"value", m.value}, {"mean", m.mean}, {"ci95", m.ci95}}; };
  json j = {{"top1", mv(top1)},
            {"top2", mv(top2)},
            {"top3", mv(top3)},
            {"mm_dist", mv(mm_dist)},
            {"diversity", mv(diversity)},
            {"fid", mv(fid)},
            {"oracle_fid", mv(oracle_fid)},
            {"oracle_score", mv(oracle_score)},
            {"multimodality", has_multimodality ? mv(multimodality) : json(nullptr)},
            {"metadata",
             {{"model_id", model_id}, {"scorer_id", scorer_id}, {"subset", subset}, {"n_samples", n_samples},
              {"seed", seed}}}};
  return j;
}

std::string csv_header() { return "name,subset,Top1,Top2,Top3,MMDist,Diversity,FID,MM,OracleFID,OracleScore,n"; }

std::string csv_row(const std::string& name, const EvalReport& r) {
  std::ostringstream o;
  o.precision(6);
  o << name << ',' << r.subset << ',' << r.top1.value << ',' << r.top2.value << ',' << r.top3.value << ','
    << r.mm_dist.value << ',' << r.diversity.value << ',' << r.fid.value << ',';
  if (r.has_multimodality) o << r.multimodality.value;
  o << ',' << r.oracle_fid.value << ',' << r.oracle_score.value << ',' << r.n_samples;
  return o.str();
}

namespace {

struct FlatEval {
  nn::Mat text, motion, oracle;
  std::vector<TokenSeq> tokens;
  std::vector<std::size_t> group_of;            // sample -> group
  std::vector<std::vector<std::size_t>> groups;  // group -> samples
  std::vector<std::int64_t> keys;
  std::vector<double> oracle_scores;
};

struct Values {
  double top1, top2, top3, mm, div, fid, mmod, ofid, oscore;
};

Values compute(const FlatEval& f, const std::vector<std::size_t>& group_sel, const EmbeddingStats& real_learned,
               const EmbeddingStats& real_oracle, bool with_mm, const EvalOptions& opt, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (std::size_t g : group_sel)
    for (std::size_t i : f.groups[g]) idx.push_back(i);
  const auto n = static_cast<Eigen::Index>(idx.size());
  nn::Mat t(f.text.rows(), n), m(f.motion.rows(), n), o(f.oracle.rows(), n);
  std::vector<TokenSeq> tok;
  double os = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
    t.col(j) = f.text.col(i);
    m.col(j) = f.motion.col(i);
    o.col(j) = f.oracle.col(i);
    tok.push_back(f.tokens[static_cast<std::size_t>(i)]);
    os += f.oracle_scores[static_cast<std::size_t>(i)];
  }
  Values v{};
  const RPrecision rp = r_precision(t, m, tok, opt.pool_size, derive_seed(seed, {1}));
  v.top1 = rp.top1;
  v.top2 = rp.top2;
  v.top3 = rp.top3;
  v.mm = mm_dist(t, m);
  v.div = diversity(m, opt.diversity_pairs, derive_seed(seed, {2}));
  v.fid = fid(embedding_stats(m), real_learned);
  v.ofid = fid(embedding_stats(o), real_oracle);
  v.oscore = os / static_cast<double>(n);
  if (with_mm) {
    std::vector<EmbeddingGroup> groups;
    std::size_t pos = 0;
    for (std::size_t g : group_sel) {
      const auto sz = static_cast<Eigen::Index>(f.groups[g].size());
      groups.push_back({f.keys[g], m.middleCols(static_cast<Eigen::Index>(pos), sz)});
      pos += static_cast<std::size_t>(sz);
    }
    v.mmod = multimodality(groups, opt.mm_draws, derive_seed(seed, {3}));
  }
  return v;
}

}  // namespace

EvalReport evaluate(const GenerationGroups& gen, const RealSet& real, const JointEmbedder& embedder,
                    const EvalOptions& opt) {
  if (gen.prompts.size() != gen.motions.size()) throw ContractError("one generation group per prompt required");
  if (gen.prompts.empty()) throw ContractError("nothing to evaluate");
  FlatEval f;
  std::vector<MotionSequence> flat;
  std::vector<PromptSpec> flat_prompts;
  bool with_mm = true;
  for (std::size_t g = 0; g < gen.prompts.size(); ++g) {
    if (gen.motions[g].empty()) throw ContractError("empty generation group");
    with_mm = with_mm && gen.motions[g].size() >= 2;
    f.groups.emplace_back();
    f.keys.push_back(gen.prompts[g].prompt_id);
    for (const auto& m : gen.motions[g]) {
      f.groups.back().push_back(flat.size());
      f.group_of.push_back(g);
      flat.push_back(m);
      flat_prompts.push_back(gen.prompts[g]);
      f.tokens.push_back(render_tokens(gen.prompts[g]));
    }
  }
  f.text = embedder.embed_texts(f.tokens);
  f.motion = embedder.embed_motions(flat);
  f.oracle.resize(kOracleFeatureDim, static_cast<Eigen::Index>(flat.size()));
  for (std::size_t i = 0; i < flat.size(); ++i) {
    f.oracle.col(static_cast<Eigen::Index>(i)) = oracle_features(flat_prompts[i], flat[i]);
    f.oracle_scores.push_back(oracle_score(flat_prompts[i], flat[i]));
  }

  if (real.prompts.size() != real.motions.size()) throw ContractError("one prompt per real motion required");
  const EmbeddingStats real_learned = embedding_stats(embedder.embed_motions(real.motions));
  nn::Mat ro(kOracleFeatureDim, static_cast<Eigen::Index>(real.motions.size()));
  for (std::size_t i = 0; i < real.motions.size(); ++i)
    ro.col(static_cast<Eigen::Index>(i)) = oracle_features(real.prompts[i], real.motions[i]);
  const EmbeddingStats real_oracle = embedding_stats(ro);

  std::vector<std::size_t> all(gen.prompts.size());
  std::iota(all.begin(), all.end(), 0);
  const Values full = compute(f, all, real_learned, real_oracle, with_mm, opt, opt.seed);

  std::vector<Values> reps;
  Rng rng(derive_seed(opt.seed, {0x4253}));
  for (int r = 0; r < opt.bootstrap; ++r) {
    std::vector<std::size_t> sel(all.size());
    for (auto& s : sel) s = rng.index(all.size());
    reps.push_back(compute(f, sel, real_learned, real_oracle, with_mm, opt,
                           derive_seed(opt.seed, {0x5245, static_cast<std::uint64_t>(r)})));
  }
  auto summarize = [&](double Values::*field) {
    MetricValue mv;
    mv.value = full.*field;
    if (reps.empty()) {
      mv.mean = mv.value;
      return mv;
    }
    double s = 0, s2 = 0;
    for (const auto& v : reps) s += v.*field;
    mv.mean = s / static_cast<double>(reps.size());
    for (const auto& v : reps) s2 += (v.*field - mv.mean) * (v.*field - mv.mean);
    const double sd = reps.size() > 1 ? std::sqrt(s2 / static_cast<double>(reps.size() - 1)) : 0.0;
    mv.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(reps.size()));
    return mv;
  };
  EvalReport rep;
  rep.top1 = summarize(&Values::top1);
  rep.top2 = summarize(&Values::top2);
  rep.top3 = summarize(&Values::top3);
  rep.mm_dist = summarize(&Values::mm);
  rep.diversity = summarize(&Values::div);
  rep.fid = summarize(&Values::fid);
  rep.oracle_fid = summarize(&Values::ofid);
  rep.oracle_score = summarize(&Values::oscore);
  rep.has_multimodality = with_mm;
  if (with_mm) rep.multimodality = summarize(&Values::mmod);
  rep.n_samples = static_cast<int>(flat.size());
  rep.seed = opt.seed;
  return rep;
}

GenerationGroups generate_groups(const Generator& g, const std::vector<PromptSpec>& prompts, int n_gen,
                                 std::uint64_t seed) {
  if (n_gen < 1) throw ContractError("n_gen must be at least 1");
  GenerationGroups out;
  out.prompts = prompts;
  out.motions.resize(prompts.size());
  constexpr std::size_t kChunk = 256;
  std::vector<TokenSeq> conds;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> owner;
  auto flush = [&] {
    if (conds.empty()) return;
    auto samples = g.sample(conds, seeds);
    for (std::size_t i = 0; i < samples.size(); ++i) out.motions[owner[i]].push_back(std::move(samples[i].motion));
    conds.clear();
    seeds.clear();
    owner.clear();
  };
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const TokenSeq tok = render_tokens(prompts[p]);
    for (int k = 0; k < n_gen; ++k) {
      conds.push_back(tok);
      seeds.push_back(derive_seed(seed, {static_cast<std::uint64_t>(prompts[p].prompt_id), static_cast<std::uint64_t>(k)}));
      owner.push_back(p);
      if (conds.size() == kChunk) flush();
    }
  }
  flush();
  return out;
}

WinnerLoserReport winner_loser_protocol(const GenerationGroups& gen, const Scorer& scorer, const RealSet& real,
                                        const JointEmbedder& embedder, const EvalOptions& opt) {
  WinnerLoserReport r;
  GenerationGroups win, lose;
  win.prompts = lose.prompts = gen.prompts;
  for (std::size_t p = 0; p < gen.prompts.size(); ++p) {
    const auto& ms = gen.motions[p];
    if (ms.size() == 1) {
      win.motions.push_back(ms);
      lose.motions.push_back(ms);
      continue;
    }
    const TokenSeq tok = render_tokens(gen.prompts[p]);
    const auto order = order_candidates(scorer.score(gen.prompts[p], tok, ms),
                                        std::vector<GeneratorTag>(ms.size(), GeneratorTag::latent));
    win.motions.push_back({ms[static_cast<std::size_t>(order.front().motion_index)]});
    lose.motions.push_back({ms[static_cast<std::size_t>(order.back().motion_index)]});
  }
  r.all = evaluate(gen, real, embedder, opt);
  r.winners = evaluate(win, real, embedder, opt);
  r.losers = evaluate(lose, real, embedder, opt);
  r.all.subset = "all";
  r.winners.subset = "winners";
  r.losers.subset = "losers";
  for (auto* e : {&r.all, &r.winners, &r.losers}) e->scorer_id = scorer.id();
  r.fid_gap = r.losers.fid.value - r.winners.fid.value;
  r.oracle_fid_gap = r.losers.oracle_fid.value - r.winners.oracle_fid.value;
  return r;
}

WinnerLoserReport winner_loser_protocol(const Generator& model, const std::vector<PromptSpec>& prompts, int n_gen,
                                        const Scorer& scorer, const RealSet& real, const JointEmbedder& embedder,
                                        const EvalOptions& opt, std::uint64_t gen_seed) {
  return winner_loser_protocol(generate_groups(model, prompts, n_gen, gen_seed), scorer, real, embedder, opt);
}

}  // namespace mdpo
