#include <doctest.h>

#include "fd_check.hpp"
#include "mdpo/checkpoint.hpp"
#include "mdpo/error.hpp"
#include "mdpo/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mdpo;

namespace {

RankerConfig small_cfg() {
  RankerConfig c;
  c.token_dim = 8;
  c.text_hidden = 12;
  c.motion_hidden = 16;
  c.embed_dim = 6;
  c.frames = 20;
  return c;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1 - 6 * d2 / (n * (n * n - 1));
}

class FixedScorer final : public Scorer {
 public:
  explicit FixedScorer(std::vector<double> s) : s_(std::move(s)) {}
  std::vector<double> score(const PromptSpec&, const TokenSeq&, const std::vector<MotionSequence>&) const override {
    return s_;
  }
  std::string id() const override { return "fixed"; }

 private:
  std::vector<double> s_;
};

const DatasetSplits& shared_data() {
  static const DatasetSplits d = build_dataset(400, 3);
  return d;
}

const JointEmbedder& trained() {
  static const JointEmbedder e = [] {
    RankerConfig c;
    c.steps = 600;
    return train_ranker(shared_data().train, c).embedder;
  }();
  return e;
}

}  // namespace

TEST_CASE("embeddings are unit vectors and cosine matches a dot product") {
  const auto& d = shared_data();
  JointEmbedder e(small_cfg(), d.train.norm, 4);
  std::vector<TokenSeq> toks;
  std::vector<MotionSequence> ms;
  for (int i = 0; i < 6; ++i) {
    toks.push_back(render_tokens(d.train.records[static_cast<std::size_t>(i)].prompt));
    ms.push_back(d.train.records[static_cast<std::size_t>(i)].motion);
  }
  const nn::Mat t = e.embed_texts(toks), m = e.embed_motions(ms);
  CHECK(t.rows() == 6);
  for (int j = 0; j < 6; ++j) {
    CHECK(t.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(score(toks[static_cast<std::size_t>(j)], ms[static_cast<std::size_t>(j)], e) ==
          doctest::Approx(t.col(j).dot(m.col(j))).epsilon(1e-12));
  }
  const Eigen::VectorXd a = (Eigen::VectorXd(3) << 1, 2, 2).finished();
  const Eigen::VectorXd b = (Eigen::VectorXd(3) << 2, 0, 0).finished();
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(cosine_similarity(a, 5 * a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, -a) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(a, Eigen::VectorXd::Zero(3)) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, Eigen::VectorXd::Ones(2)), ContractError);
}

TEST_CASE("oracle score") {
  PromptSpec p{Action::walk, 1.2, 0.8, 0.3, 1};
  const auto clean = family_motion(p.action, p.speed, p.amplitude, p.direction, 60, 20);
  CHECK(std::abs(oracle_score(p, clean)) < 1e-6);
  const auto j = oracle_judge(p, clean);
  CHECK(j.score == doctest::Approx(-(j.realism_residual + j.attribute_mismatch)));
  CHECK(oracle_score(p, generate_ground_truth(p, 60, 9)) < 0);

  // Larger attribute errors score monotonically lower.
  std::vector<double> offsets, scores;
  for (int i = 0; i <= 10; ++i) {
    const double off = 0.08 * i;
    offsets.push_back(-off);
    PromptSpec q = p;
    q.speed = p.speed + off;
    q.amplitude = std::min(kAmplitudeMax, p.amplitude + 0.5 * off);
    scores.push_back(oracle_score(p, generate_ground_truth(q, 60, 100 + static_cast<std::uint64_t>(i))));
  }
  CHECK(spearman(offsets, scores) > 0.9);

  const auto f = oracle_features(p, clean);
  CHECK(f.size() == kOracleFeatureDim);
  CHECK(f.allFinite());
  PromptSpec s{Action::stand, 1.0, 0.5, 0.0, 2};
  const auto still = family_motion(Action::stand, 1.0, 0.5, 0.0, 60, 20);
  CHECK(oracle_judge(s, still).attribute_mismatch == 0.0);
}

TEST_CASE("ranking order and ties") {
  CHECK_THROWS_AS(order_candidates({1.0, 2.0}, {GeneratorTag::latent}), ContractError);
  const auto o = order_candidates({0.1, 0.5, 0.5, -1.0, 0.5},
                                  {GeneratorTag::latent, GeneratorTag::ground_truth, GeneratorTag::raw,
                                   GeneratorTag::raw, GeneratorTag::latent});
  std::vector<int> order;
  for (const auto& c : o) order.push_back(c.motion_index);
  CHECK(order == std::vector<int>{2, 4, 1, 0, 3});

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(10));
    std::vector<double> s;
    std::vector<GeneratorTag> tags;
    for (int i = 0; i < n; ++i) {
      s.push_back(std::round(rng.normal() * 2) / 2);
      tags.push_back(static_cast<GeneratorTag>(rng.index(3)));
    }
    const auto r = order_candidates(s, tags);
    std::vector<int> seen;
    for (std::size_t i = 0; i < r.size(); ++i) {
      seen.push_back(r[i].motion_index);
      CHECK(r[i].score == s[static_cast<std::size_t>(r[i].motion_index)]);
      if (i > 0) CHECK(r[i].score <= r[i - 1].score);
    }
    std::sort(seen.begin(), seen.end());
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    CHECK(seen == all);
  }

  const auto& d = shared_data();
  const auto& r0 = d.train.records[0];
  std::vector<MotionSequence> ms{r0.motion, r0.motion, r0.motion};
  const auto ranked = rank(r0.prompt, render_tokens(r0.prompt), ms,
                           {GeneratorTag::latent, GeneratorTag::latent, GeneratorTag::latent},
                           FixedScorer({0.2, 0.9, 0.4}));
  CHECK(ranked.prompt_id == r0.prompt.prompt_id);
  CHECK(ranked.candidates[0].motion_index == 1);
  CHECK(ranked.candidates[2].motion_index == 0);
  CHECK(ranked.motions.size() == 3);
  CHECK_THROWS_AS(rank(r0.prompt, render_tokens(r0.prompt), {r0.motion}, {GeneratorTag::latent}, FixedScorer({1})),
                  ContractError);
}

TEST_CASE("contrastive loss gradient") {
  const auto& d = shared_data();
  JointEmbedder e(small_cfg(), d.train.norm, 8);
  std::vector<TokenSeq> toks;
  std::vector<MotionSequence> ms;
  for (int i = 0; i < 8; ++i) {
    toks.push_back(render_tokens(d.train.records[static_cast<std::size_t>(i)].prompt));
    ms.push_back(d.train.records[static_cast<std::size_t>(i)].motion);
  }
  toks[3] = toks[1];  // a shared positive
  const nn::Mat x = e.motion_inputs(ms);
  nn::Grads g(e.params);
  const double loss = e.contrastive_loss(toks, x, &g);
  CHECK(std::isfinite(loss));
  CHECK(loss == e.contrastive_loss(toks, x, nullptr));
  const auto r = testing::fd_check(e.params, g, [&] { return e.contrastive_loss(toks, x, nullptr); }, 150, 2);
  CHECK(r.checked == 150);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("ranker training") {
  const auto& d = shared_data();
  RankerConfig c = small_cfg();
  c.frames = 60;
  c.steps = 0;
  const auto z = train_ranker(d.train, c);
  CHECK(z.loss_history.empty());
  CHECK(z.embedder.params.bitwise_equal(JointEmbedder(c, d.train.norm, derive_seed(c.seed, {1})).params));
  c.steps = 20;
  const auto a = train_ranker(d.train, c), b = train_ranker(d.train, c);
  CHECK(a.embedder.params.bitwise_equal(b.embedder.params));
  CHECK(a.loss_history == b.loss_history);
  const auto back = JointEmbedder::from_checkpoint(parse_checkpoint(serialize_checkpoint(a.embedder.to_checkpoint())));
  CHECK(back.params.bitwise_equal(a.embedder.params));
  const auto& m = d.test.records[0].motion;
  CHECK(back.embed_motion(m) == a.embedder.embed_motion(m));
}

TEST_CASE("trained ranker separates matched from mismatched text") {
  const auto& d = shared_data();
  const auto& e = trained();
  int matched_better = 0, top1 = 0;
  const auto& test = d.test.records;
  Rng rng(12);
  for (const auto& r : test) {
    PromptSpec other = r.prompt;
    other.action = static_cast<Action>((static_cast<int>(r.prompt.action) + 1 + rng.index(4)) % kActionCount);
    if (score(render_tokens(r.prompt), r.motion, e) > score(render_tokens(other), r.motion, e)) ++matched_better;
  }
  // Top-1 among 32 distinct texts drawn from the test split.
  std::vector<TokenSeq> pool;
  std::vector<MotionSequence> motions;
  for (const auto& r : test) {
    const auto t = render_tokens(r.prompt);
    if (std::find(pool.begin(), pool.end(), t) == pool.end() && pool.size() < 32) {
      pool.push_back(t);
      motions.push_back(r.motion);
    }
  }
  const nn::Mat T = e.embed_texts(pool), M = e.embed_motions(motions);
  const nn::Mat S = T.transpose() * M;
  for (Eigen::Index j = 0; j < S.cols(); ++j) {
    Eigen::Index best = 0;
    S.col(j).maxCoeff(&best);
    if (best == j) ++top1;
  }
  CHECK(matched_better >= 0.9 * static_cast<double>(test.size()));
  CHECK(static_cast<double>(top1) / static_cast<double>(S.cols()) > 1.0 / 32.0);
}
