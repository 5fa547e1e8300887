#include "mdpo/config.hpp"

#include "mdpo/error.hpp"
#include "mdpo/hash.hpp"
#include "mdpo/io.hpp"

#include <set>

namespace mdpo {

using nlohmann::json;

namespace {

// Reads fields from a JSON object, rejecting unknown keys.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError("section '" + section_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + section_ + "." + it.key() + "'");
  }

  template <class T>
  void operator()(const char* key, T& v) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      read(*it, v);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + section_ + "." + key + "': " + e.what());
    }
  }

 private:
  template <class T>
  static void read(const json& j, T& v) { v = j.get<T>(); }
  static void read(const json& j, ScheduleKind& v) { v = schedule_kind_from_string(j.get<std::string>()); }
  static void read(const json& j, SpaceKind& v) { v = space_from_string(j.get<std::string>()); }
  static void read(const json& j, ScorerKind& v) { v = scorer_from_string(j.get<std::string>()); }
  static void read(const json& j, Selection& v) { v = selection_from_string(j.get<std::string>()); }
  static void read(const json& j, FreezePolicy& v) { v = freeze_policy_from_string(j.get<std::string>()); }
  static void read(const json& j, std::vector<SpaceKind>& v) {
    v.clear();
    for (const auto& s : j) v.push_back(space_from_string(s.get<std::string>()));
  }

  const json& j_;
  std::string section_;
  std::set<std::string> used_;
};

class Writer {
 public:
  template <class T>
  void operator()(const char* key, const T& v) { j[key] = write(v); }
  json j = json::object();

 private:
  template <class T>
  static json write(const T& v) { return v; }
  static json write(ScheduleKind v) { return to_string(v); }
  static json write(SpaceKind v) { return to_string(v); }
  static json write(ScorerKind v) { return to_string(v); }
  static json write(Selection v) { return to_string(v); }
  static json write(const FreezePolicy& v) { return to_string(v); }
  static json write(const std::vector<SpaceKind>& v) {
    json a = json::array();
    for (auto s : v) a.push_back(to_string(s));
    return a;
  }
};

template <class V, class S>
void domain_fields(V& v, S& s) {
  v("frames", s.domain.frames);
  v("fps", s.domain.fps);
  v("min_frames", s.domain.min_frames);
  v("max_frames", s.domain.max_frames);
  v("noise", s.domain.noise);
  v("n_prompts", s.domain.n_prompts);
  v("seed", s.seed);
}

template <class V, class S>
void vae_fields(V& v, S& s) {
  v("frames", s.frames);
  v("latent_dim", s.latent_dim);
  v("hidden", s.hidden);
  v("steps", s.steps);
  v("batch", s.batch);
  v("lr", s.lr);
  v("kl_weight", s.kl_weight);
  v("warmup_frac", s.warmup_frac);
  v("seed", s.seed);
}

template <class V, class S>
void diffusion_fields(V& v, S& s) {
  v("schedule", s.schedule);
  v("T", s.T);
  v("beta_min", s.beta_min);
  v("beta_max", s.beta_max);
  v("hidden", s.hidden);
  v("depth", s.depth);
  v("steps", s.steps);
  v("batch", s.batch);
  v("lr", s.lr);
  v("cond_dropout", s.cond_dropout);
  v("seed", s.seed);
}

template <class V, class S>
void ranker_fields(V& v, S& s) {
  v("embed_dim", s.embed_dim);
  v("token_dim", s.token_dim);
  v("text_hidden", s.text_hidden);
  v("motion_hidden", s.motion_hidden);
  v("frames", s.frames);
  v("temperature", s.temperature);
  v("batch", s.batch);
  v("steps", s.steps);
  v("lr", s.lr);
  v("seed", s.seed);
}

template <class V, class S>
void pam_fields(V& v, S& s) {
  v("K", s.K);
  v("n_prompts", s.n_prompts);
  v("scorer", s.scorer);
  v("generators", s.generators);
  v("seed", s.seed);
}

template <class V, class S>
void alignment_fields(V& v, S& s) {
  v("beta_dpo", s.beta_dpo);
  v("selection", s.selection);
  v("gt_p", s.gt_p);
  v("online", s.online);
  v("online_K", s.online_K);
  v("pam_plus", s.pam_plus);
  v("freeze_policy", s.freeze);
  v("learning_rate", s.learning_rate);
  v("momentum", s.momentum);
  v("steps", s.steps);
  v("batch", s.batch);
  v("inner_iterations", s.inner_iterations);
  v("seed", s.seed);
}

template <class V, class S>
void align_fields(V& v, S& s) {
  alignment_fields(v, s.config);
  v("target", s.target);
  v("online_prompts", s.online_prompts);
}

template <class V, class S>
void eval_fields(V& v, S& s) {
  v("pool_size", s.options.pool_size);
  v("diversity_pairs", s.options.diversity_pairs);
  v("mm_draws", s.options.mm_draws);
  v("bootstrap", s.options.bootstrap);
  v("seed", s.options.seed);
  v("n_gen", s.n_gen);
  v("real_draws", s.real_draws);
  v("protocol_scorer", s.protocol_scorer);
  v("gen_seed", s.gen_seed);
}

template <class F>
void read_section(const json& j, const char* name, F&& f) {
  auto it = j.find(name);
  if (it == j.end()) return;
  Reader r(*it, name);
  f(r);
}

template <class F>
json write_section(F&& f) {
  Writer w;
  f(w);
  return w.j;
}

void validate(const RunConfig& c) {
  const auto& d = c.domain.domain;
  if (d.fps < 1) throw ConfigError("domain.fps must be positive");
  if (d.min_frames < 2 || d.min_frames > d.max_frames) throw ConfigError("domain frame range is invalid");
  if (d.frames < d.min_frames || d.frames > d.max_frames) throw ConfigError("domain.frames outside frame range");
  if (d.noise < 0) throw ConfigError("domain.noise must be non-negative");
  if (c.vae.frames != d.frames || c.ranker.frames != d.frames)
    throw ConfigError("vae.frames and ranker.frames must equal domain.frames");
  if (c.pam.K < 1) throw ConfigError("pam.K must be at least 1");
  if (c.pam.generators.empty()) throw ConfigError("pam.generators must not be empty");
  if (std::set<SpaceKind>(c.pam.generators.begin(), c.pam.generators.end()).size() != c.pam.generators.size())
    throw ConfigError("pam.generators must not repeat a space");
  if (c.pam.generators.size() * static_cast<std::size_t>(c.pam.K) < 2)
    throw ConfigError("preference sets need at least 2 candidates");
  if (c.pam.n_prompts < 1) throw ConfigError("pam.n_prompts must be positive");
  if (c.eval.n_gen < 1 || c.eval.real_draws < 1) throw ConfigError("eval.n_gen and eval.real_draws must be positive");
  c.align.config.validate();
  if (c.align.config.freeze.kind == FreezeKind::denoiser_only && c.align.target != SpaceKind::latent)
    throw ConfigError("denoiser_only freezing requires align.target = latent");
}

}  // namespace

AlignmentConfig alignment_from_json(const json& j, AlignmentConfig base) {
  {
    Reader r(j, "align");
    alignment_fields(r, base);
  }
  base.validate();
  return base;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections{
      "domain", "vae", "diffusion_raw", "diffusion_latent", "ranker", "pam", "align", "eval", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!sections.count(it.key())) throw ConfigError("unknown config section '" + it.key() + "'");
  RunConfig c;
  read_section(j, "domain", [&](Reader& r) { domain_fields(r, c.domain); });
  read_section(j, "vae", [&](Reader& r) { vae_fields(r, c.vae); });
  read_section(j, "diffusion_raw", [&](Reader& r) { diffusion_fields(r, c.diffusion_raw); });
  read_section(j, "diffusion_latent", [&](Reader& r) { diffusion_fields(r, c.diffusion_latent); });
  read_section(j, "ranker", [&](Reader& r) { ranker_fields(r, c.ranker); });
  read_section(j, "pam", [&](Reader& r) { pam_fields(r, c.pam); });
  read_section(j, "align", [&](Reader& r) { align_fields(r, c.align); });
  read_section(j, "eval", [&](Reader& r) { eval_fields(r, c.eval); });
  if (j.contains("seed")) {
    try {
      c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for 'seed': ") + e.what());
    }
  }
  c.diffusion_raw.space = SpaceKind::raw;
  c.diffusion_latent.space = SpaceKind::latent;
  validate(c);
  return c;
}

json section_json(const RunConfig& c, std::string_view s) {
  if (s == "domain") return write_section([&](Writer& w) { domain_fields(w, c.domain); });
  if (s == "vae") return write_section([&](Writer& w) { vae_fields(w, c.vae); });
  if (s == "diffusion_raw") return write_section([&](Writer& w) { diffusion_fields(w, c.diffusion_raw); });
  if (s == "diffusion_latent") return write_section([&](Writer& w) { diffusion_fields(w, c.diffusion_latent); });
  if (s == "ranker") return write_section([&](Writer& w) { ranker_fields(w, c.ranker); });
  if (s == "pam") return write_section([&](Writer& w) { pam_fields(w, c.pam); });
  if (s == "align") return write_section([&](Writer& w) { align_fields(w, c.align); });
  if (s == "eval") return write_section([&](Writer& w) { eval_fields(w, c.eval); });
  throw ConfigError("unknown config section '" + std::string(s) + "'");
}

json config_to_json(const RunConfig& c) {
  json j = json::object();
  for (const char* s : {"domain", "vae", "diffusion_raw", "diffusion_latent", "ranker", "pam", "align", "eval"})
    j[s] = section_json(c, s);
  j["seed"] = c.seed;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string section_hash(const RunConfig& c, std::string_view s) { return sha256_hex(section_json(c, s).dump()); }

std::string config_hash(const RunConfig& c) { return sha256_hex(config_to_json(c).dump()); }

}  // namespace mdpo
