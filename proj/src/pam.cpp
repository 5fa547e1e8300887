#include "mdpo/pam.hpp"

#include "mdpo/error.hpp"
#include "mdpo/hash.hpp"
#include "mdpo/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>

namespace mdpo {

using nlohmann::json;

const char* to_string(Selection s) { return s == Selection::edge ? "edge" : "stochastic"; }

Selection selection_from_string(std::string_view s) {
  if (s == "edge") return Selection::edge;
  if (s == "stochastic") return Selection::stochastic;
  throw ConfigError("unknown selection: " + std::string(s));
}

const PamRecord& PamDataset::find(std::int64_t prompt_id) const {
  auto it = std::lower_bound(records.begin(), records.end(), prompt_id,
                             [](const PamRecord& r, std::int64_t id) { return r.prompt.prompt_id < id; });
  if (it == records.end() || it->prompt.prompt_id != prompt_id)
    throw ContractError("prompt " + std::to_string(prompt_id) + " not in preference dataset");
  return *it;
}

namespace {

std::uint64_t candidate_seed(std::uint64_t seed, std::int64_t prompt_id, std::size_t g, int k) {
  return derive_seed(seed, {static_cast<std::uint64_t>(prompt_id), g, static_cast<std::uint64_t>(k)});
}

}  // namespace

GenerationSet generate_candidates(const std::vector<PamGenerator>& generators, const PromptSpec& prompt, int K,
                                  std::uint64_t seed) {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (generators.empty()) throw ConfigError("at least one generator is required");
  GenerationSet set;
  set.prompt_id = prompt.prompt_id;
  const TokenSeq tokens = render_tokens(prompt);
  for (std::size_t g = 0; g < generators.size(); ++g) {
    const Generator& gen = *generators[g].generator;
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < K; ++k) seeds.push_back(candidate_seed(seed, prompt.prompt_id, g, k));
    std::vector<Generator::Sample> samples;
    try {
      samples = gen.sample(std::vector<TokenSeq>(static_cast<std::size_t>(K), tokens), seeds);
    } catch (const Error& e) {
      throw BuildError("generation failed for prompt " + std::to_string(prompt.prompt_id) + ": " + e.what());
    }
    for (int k = 0; k < K; ++k) {
      set.motions.push_back(std::move(samples[static_cast<std::size_t>(k)].motion));
      set.generator_tags.push_back(gen.tag());
      set.seeds.push_back(seeds[static_cast<std::size_t>(k)]);
      if (gen.space == SpaceKind::latent)
        set.latents.emplace_back(samples[static_cast<std::size_t>(k)].state);
      else
        set.latents.emplace_back(std::nullopt);
    }
  }
  return set;
}

PamDataset build_pam(const std::vector<PamGenerator>& generators, const std::vector<PromptSpec>& prompts, int K,
                     const Scorer& scorer, std::uint64_t seed) {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (generators.empty()) throw ConfigError("at least one generator is required");
  if (generators.size() * static_cast<std::size_t>(K) < 2) throw ConfigError("need at least 2 candidates per prompt");
  PamDataset pam;
  pam.manifest.K = K;
  pam.manifest.seed = seed;
  pam.manifest.ranker_id = scorer.id();
  for (const auto& g : generators) pam.manifest.generator_checkpoints.push_back(g.checkpoint_hash);

  std::vector<PromptSpec> sorted = prompts;
  std::sort(sorted.begin(), sorted.end(), [](const PromptSpec& a, const PromptSpec& b) { return a.prompt_id < b.prompt_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].prompt_id == sorted[i - 1].prompt_id) throw ConfigError("duplicate prompt id in preference build");

  for (const auto& p : sorted) {
    GenerationSet set = generate_candidates(generators, p, K, seed);
    PamRecord rec;
    rec.prompt = p;
    rec.tokens = render_tokens(p);
    rec.seeds = set.seeds;
    rec.latents = std::move(set.latents);
    rec.ranked = rank(p, rec.tokens, std::move(set.motions), set.generator_tags, scorer);
    pam.records.push_back(std::move(rec));
  }
  pam.manifest.content_hash = pam_content_hash(pam);
  return pam;
}

std::int64_t pair_count(int N) {
  if (N < 2) throw ContractError("pair count needs N >= 2");
  return static_cast<std::int64_t>(N) * (N - 1) / 2;
}

namespace {

PreferencePair make_pair(const RankedSet& rs, int wr, int lr, Selection s) {
  PreferencePair p;
  p.prompt_id = rs.prompt_id;
  const auto& w = rs.candidates[static_cast<std::size_t>(wr)];
  const auto& l = rs.candidates[static_cast<std::size_t>(lr)];
  p.winner = w.motion_index;
  p.loser = l.motion_index;
  p.winner_rank = wr;
  p.loser_rank = lr;
  p.winner_score = w.score;
  p.loser_score = l.score;
  p.selection = s;
  return p;
}

void require_pairable(const RankedSet& rs) {
  if (rs.candidates.size() < 2) throw ContractError("pair selection needs N >= 2");
}

}  // namespace

PreferencePair select_pair_edge(const RankedSet& rs) {
  require_pairable(rs);
  return make_pair(rs, 0, static_cast<int>(rs.candidates.size()) - 1, Selection::edge);
}

PreferencePair select_pair_stochastic(const RankedSet& rs, Rng& rng) {
  require_pairable(rs);
  const int n = static_cast<int>(rs.candidates.size());
  const int half = n / 2;
  const int wr = static_cast<int>(rng.index(static_cast<std::size_t>(half)));
  const int lr = n - half + static_cast<int>(rng.index(static_cast<std::size_t>(half)));
  return make_pair(rs, wr, lr, Selection::stochastic);
}

PreferencePair select_pair(const RankedSet& rs, Selection s, Rng& rng) {
  return s == Selection::edge ? select_pair_edge(rs) : select_pair_stochastic(rs, rng);
}

PreferencePair maybe_substitute_gt(PreferencePair pair, const MotionSequence& gt_motion, double gt_p, Rng& rng) {
  if (!(gt_p >= 0.0 && gt_p <= 1.0)) throw ConfigError("GT_p must be in [0, 1]");
  // Always consume one draw so the stream does not depend on GT_p.
  const double u = rng.uniform();
  if (u < gt_p) {
    pair.winner = kGroundTruthIndex;
    pair.gt_substituted = true;
    pair.gt_winner = gt_motion;
  }
  return pair;
}

// ---- persistence ----

namespace {

json motion_json(const MotionSequence& m) {
  return {{"frames", m.frames()},
          {"fps", m.fps},
          {"data", std::vector<double>(m.data.data(), m.data.data() + m.data.size())}};
}

MotionSequence motion_from_json(const json& j) {
  const int frames = j.at("frames").get<int>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != static_cast<std::size_t>(frames) * kFeatures) throw IntegrityError("motion payload size mismatch");
  MotionSequence m;
  m.fps = j.at("fps").get<int>();
  m.data = Eigen::Map<const MotionMat>(data.data(), frames, kFeatures);
  return m;
}

json record_json(const PamRecord& r) {
  json cands = json::array();
  for (const auto& c : r.ranked.candidates)
    cands.push_back({{"motion_index", c.motion_index},
                     {"generator_tag", to_string(c.generator_tag)},
                     {"seed", r.seeds.at(static_cast<std::size_t>(c.motion_index))},
                     {"score", c.score}});
  json motions = json::array();
  for (const auto& m : r.ranked.motions) motions.push_back(motion_json(m));
  json latents = json::array();
  for (const auto& z : r.latents)
    latents.push_back(z ? json(std::vector<double>(z->data(), z->data() + z->size())) : json(nullptr));
  return {{"prompt_id", r.prompt.prompt_id},
          {"action", to_string(r.prompt.action)},
          {"speed", r.prompt.speed},
          {"amplitude", r.prompt.amplitude},
          {"direction", r.prompt.direction},
          {"tokens", r.tokens.tokens},
          {"candidates", cands},
          {"motions", motions},
          {"latents", latents}};
}

PamRecord record_from_json(const json& j) {
  PamRecord r;
  r.prompt.prompt_id = j.at("prompt_id").get<std::int64_t>();
  r.prompt.action = action_from_string(j.at("action").get<std::string>());
  r.prompt.speed = j.at("speed").get<double>();
  r.prompt.amplitude = j.at("amplitude").get<double>();
  r.prompt.direction = j.at("direction").get<double>();
  r.tokens.tokens = j.at("tokens").get<std::vector<int>>();
  r.ranked.prompt_id = r.prompt.prompt_id;
  for (const auto& m : j.at("motions")) r.ranked.motions.push_back(motion_from_json(m));
  const std::size_t n = r.ranked.motions.size();
  r.seeds.assign(n, 0);
  std::vector<bool> seen(n, false);
  for (const auto& c : j.at("candidates")) {
    ScoredCandidate sc;
    sc.motion_index = c.at("motion_index").get<int>();
    sc.generator_tag = tag_from_string(c.at("generator_tag").get<std::string>());
    sc.score = c.at("score").get<double>();
    if (sc.motion_index < 0 || static_cast<std::size_t>(sc.motion_index) >= n || seen[sc.motion_index])
      throw IntegrityError("candidate indices are not a permutation");
    seen[sc.motion_index] = true;
    r.seeds[sc.motion_index] = c.at("seed").get<std::uint64_t>();
    r.ranked.candidates.push_back(sc);
  }
  if (r.ranked.candidates.size() != n) throw IntegrityError("candidate count mismatch");
  for (const auto& z : j.at("latents")) {
    if (z.is_null()) {
      r.latents.emplace_back(std::nullopt);
    } else {
      const auto v = z.get<std::vector<double>>();
      r.latents.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
  }
  if (r.latents.size() != n) throw IntegrityError("latent payload count mismatch");
  return r;
}

std::string records_text(const PamDataset& pam) {
  std::string out;
  for (const auto& r : pam.records) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

}  // namespace

std::string pam_content_hash(const PamDataset& pam) { return sha256_hex(records_text(pam)); }

std::string serialize_pam(const PamDataset& pam) {
  const std::string body = records_text(pam);
  json m = {{"schema_version", pam.manifest.schema_version},
            {"generator_checkpoints", pam.manifest.generator_checkpoints},
            {"ranker_id", pam.manifest.ranker_id},
            {"K", pam.manifest.K},
            {"seed", pam.manifest.seed},
            {"n_records", pam.records.size()},
            {"content_hash", sha256_hex(body)}};
  return m.dump() + "\n" + body;
}

PamDataset parse_pam(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError("empty preference dataset file");
  json m;
  try {
    m = json::parse(line);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("unreadable preference manifest: ") + e.what());
  }
  PamDataset pam;
  try {
    pam.manifest.schema_version = m.at("schema_version").get<int>();
    if (pam.manifest.schema_version != kPamSchemaVersion)
      throw IntegrityError("unsupported preference schema version " + std::to_string(pam.manifest.schema_version));
    pam.manifest.generator_checkpoints = m.at("generator_checkpoints").get<std::vector<std::string>>();
    pam.manifest.ranker_id = m.at("ranker_id").get<std::string>();
    pam.manifest.K = m.at("K").get<int>();
    pam.manifest.seed = m.at("seed").get<std::uint64_t>();
    pam.manifest.content_hash = m.at("content_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed preference manifest: ") + e.what());
  }
  const std::string body = text.substr(line.size() + 1 <= text.size() ? line.size() + 1 : text.size());
  if (sha256_hex(body) != pam.manifest.content_hash) throw IntegrityError("preference dataset hash mismatch");
  std::istringstream lines(body);
  try {
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      pam.records.push_back(record_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed preference record: ") + e.what());
  }
  if (m.value("n_records", static_cast<std::size_t>(0)) != pam.records.size())
    throw IntegrityError("preference record count mismatch");
  return pam;
}

void save_pam(const std::filesystem::path& path, const PamDataset& pam) { write_file_atomic(path, serialize_pam(pam)); }

PamDataset load_pam(const std::filesystem::path& path) { return parse_pam(read_file(path)); }

}  // namespace mdpo
