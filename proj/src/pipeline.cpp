#include "mdpo/pipeline.hpp"

#include "mdpo/checkpoint.hpp"
#include "mdpo/error.hpp"
#include "mdpo/hash.hpp"
#include "mdpo/io.hpp"
#include "mdpo/pam.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mdpo {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"gen-data",     "train-vae", "train-diffusion-raw",
                                              "train-diffusion-latent", "train-ranker", "build-pam",
                                              "align",        "eval",      "ablate",
                                              "report"};
  return names;
}

namespace {

std::string diffusion_stage(SpaceKind s) {
  return s == SpaceKind::raw ? "train-diffusion-raw" : "train-diffusion-latent";
}

struct StageSpec {
  std::vector<std::string> sections;
  std::vector<std::string> upstream;
};

StageSpec spec_of(const RunConfig& c, const std::string& stage) {
  if (stage == "gen-data") return {{"domain"}, {}};
  if (stage == "train-vae") return {{"vae"}, {"gen-data"}};
  if (stage == "train-diffusion-raw") return {{"diffusion_raw"}, {"gen-data"}};
  if (stage == "train-diffusion-latent") return {{"diffusion_latent"}, {"gen-data", "train-vae"}};
  if (stage == "train-ranker") return {{"ranker"}, {"gen-data"}};
  if (stage == "build-pam") {
    StageSpec s{{"pam"}, {"gen-data", "train-ranker"}};
    for (auto g : c.pam.generators) s.upstream.push_back(diffusion_stage(g));
    return s;
  }
  if (stage == "align") {
    if (c.align.config.online) return {{"align", "pam"}, {"gen-data", "train-ranker", diffusion_stage(c.align.target)}};
    return {{"align"}, {"gen-data", "build-pam", diffusion_stage(c.align.target)}};
  }
  if (stage == "eval") return {{"eval"}, {"gen-data", "train-ranker", diffusion_stage(c.align.target), "align"}};
  if (stage == "ablate") {
    StageSpec s{{"pam", "align", "eval"}, {"gen-data", "train-ranker", "build-pam"}};
    for (auto g : c.pam.generators) s.upstream.push_back(diffusion_stage(g));
    if (std::find(s.upstream.begin(), s.upstream.end(), diffusion_stage(c.align.target)) == s.upstream.end())
      s.upstream.push_back(diffusion_stage(c.align.target));
    return s;
  }
  if (stage == "report") return {{}, {"eval"}};
  throw ConfigError("unknown stage '" + stage + "'");
}

json key_document(const RunConfig& c, const std::string& stage, const std::string& extra) {
  const StageSpec s = spec_of(c, stage);
  json doc = {{"stage", stage}, {"seed", c.seed}, {"sections", json::object()}, {"upstream", json::object()}};
  for (const auto& sec : s.sections) doc["sections"][sec] = section_json(c, sec);
  for (const auto& up : s.upstream) doc["upstream"][up] = expected_stage_key(c, up);
  if (!extra.empty()) doc["extra"] = extra;
  return doc;
}

std::uint64_t stage_seed(const RunConfig& c, std::uint64_t salt, std::uint64_t section_seed) {
  return derive_seed(c.seed, {salt, section_seed});
}

class Stages {
 public:
  explicit Stages(const PipelineOptions& opt) : opt_(opt), cfg_(opt.config) {}

  StageResult run(const std::string& stage) {
    std::string extra;
    std::optional<json> grid_doc;
    if (stage == "ablate") {
      if (opt_.grid) {
        try {
          grid_doc = json::parse(read_file(*opt_.grid));
        } catch (const json::exception& e) {
          throw ConfigError("cannot parse grid " + opt_.grid->string() + ": " + e.what());
        }
        extra = sha256_hex(grid_doc->dump());
      } else {
        extra = "default-grid";
      }
    }
    const StageSpec spec = spec_of(cfg_, stage);
    std::map<std::string, json> ups;
    for (const auto& up : spec.upstream) ups[up] = upstream(up);
    json doc = key_document(cfg_, stage, extra);
    if (stage == "report" && fs::exists(summary_path("ablate"))) {
      const json ab = upstream("ablate");
      doc["upstream"]["ablate"] = ab.at("key");
      ups["ablate"] = ab;
    }
    const std::string key = sha256_hex(doc.dump());

    StageResult res;
    res.stage = stage;
    res.key = key;
    if (auto prev = current_summary(stage); prev && prev->at("key") == key && outputs_intact(*prev)) {
      res.skipped = true;
      res.summary = *prev;
      return res;
    }

    dir_ = opt_.out / stage / key.substr(0, 16);
    outputs_ = json::object();
    extra_ = json::object();
    ups_ = std::move(ups);
    grid_doc_ = std::move(grid_doc);

    if (stage == "gen-data") gen_data();
    else if (stage == "train-vae") train_vae_stage();
    else if (stage == "train-diffusion-raw") train_diffusion_stage(SpaceKind::raw);
    else if (stage == "train-diffusion-latent") train_diffusion_stage(SpaceKind::latent);
    else if (stage == "train-ranker") train_ranker_stage();
    else if (stage == "build-pam") build_pam_stage();
    else if (stage == "align") align_stage();
    else if (stage == "eval") eval_stage();
    else if (stage == "ablate") ablate_stage();
    else if (stage == "report") report_stage();

    json summary = {{"stage", stage},
                    {"key", key},
                    {"config_hash", config_hash(cfg_)},
                    {"seed", cfg_.seed},
                    {"dir", fs::relative(dir_, opt_.out).generic_string()},
                    {"inputs", json::object()},
                    {"outputs", outputs_},
                    {"info", extra_}};
    for (const auto& [name, up] : ups_) summary["inputs"][name] = up.at("key");
    write_file_atomic(summary_path(stage), summary.dump(2) + "\n");
    res.summary = std::move(summary);
    return res;
  }

 private:
  // ---- bookkeeping ----

  fs::path summary_path(const std::string& stage) const { return opt_.out / "stages" / (stage + ".json"); }

  std::optional<json> current_summary(const std::string& stage) const {
    const fs::path p = summary_path(stage);
    if (!fs::exists(p)) return std::nullopt;
    try {
      return json::parse(read_file(p));
    } catch (const json::exception& e) {
      throw IntegrityError("unreadable stage summary " + p.string() + ": " + e.what());
    }
  }

  bool outputs_intact(const json& summary) const {
    const fs::path dir = opt_.out / summary.at("dir").get<std::string>();
    for (auto it = summary.at("outputs").begin(); it != summary.at("outputs").end(); ++it) {
      const fs::path p = dir / it.key();
      if (!fs::exists(p) || sha256_hex(read_file(p)) != it.value().get<std::string>()) return false;
    }
    return true;
  }

  json upstream(const std::string& stage) const {
    auto s = current_summary(stage);
    if (!s) throw PipelineError("missing upstream stage '" + stage + "': run it first");
    const std::string expect = stage == "ablate" ? s->at("key").get<std::string>() : expected_stage_key(cfg_, stage);
    if (s->at("key").get<std::string>() != expect)
      throw StalenessError("stage '" + stage + "' was produced under a different configuration; re-run it");
    return *s;
  }

  // Path of a verified upstream artifact.
  fs::path artifact(const std::string& stage, const std::string& name) const {
    const json& s = ups_.at(stage);
    const fs::path p = opt_.out / s.at("dir").get<std::string>() / name;
    if (!fs::exists(p)) throw PipelineError("artifact " + name + " of stage '" + stage + "' is missing");
    const auto& outs = s.at("outputs");
    if (!outs.contains(name)) throw PipelineError("stage '" + stage + "' has no artifact " + name);
    if (sha256_hex(read_file(p)) != outs.at(name).get<std::string>())
      throw IntegrityError("artifact " + p.string() + " does not match its recorded hash");
    return p;
  }

  std::string artifact_hash(const std::string& stage, const std::string& name) const {
    return ups_.at(stage).at("outputs").at(name).get<std::string>();
  }

  void emit(const std::string& name, const std::string& bytes) {
    write_file_atomic(dir_ / name, bytes);
    outputs_[name] = sha256_hex(bytes);
  }

  static std::string loss_log(const std::vector<double>& h) {
    std::string s;
    for (std::size_t i = 0; i < h.size(); ++i) s += json{{"step", i}, {"loss", h[i]}}.dump() + "\n";
    return s;
  }

  // ---- loaders ----

  DatasetSplits dataset() const {
    if (!data_) {
      const fs::path p = artifact("gen-data", "train.jsonl").parent_path();
      for (const char* f : {"val.jsonl", "test.jsonl", "norm_stats.json"}) artifact("gen-data", f);
      data_ = load_dataset(p);
    }
    return *data_;
  }

  Generator generator(SpaceKind s) const {
    return Generator::from_checkpoint(load_checkpoint(artifact(diffusion_stage(s), "generator.ckpt")));
  }

  JointEmbedder embedder() const {
    return JointEmbedder::from_checkpoint(load_checkpoint(artifact("train-ranker", "ranker.ckpt")));
  }

  std::string ranker_hash() const { return artifact_hash("train-ranker", "ranker.ckpt"); }

  std::vector<PromptSpec> pam_prompts(const DatasetSplits& d) const {
    const auto& recs = d.train.records;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg_.pam.n_prompts), recs.size());
    std::vector<PromptSpec> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(recs[i * recs.size() / n].prompt);
    return out;
  }

  static GtSource gt_source(const MotionDataset& d) {
    GtSource gt;
    for (const auto& r : d.records) gt.emplace(r.prompt.prompt_id, r.motion);
    return gt;
  }

  RealSet real_set(const DatasetSplits& d) const {
    RealSet real;
    const std::uint64_t seed = stage_seed(cfg_, 0x5245414c, cfg_.eval.gen_seed);
    for (const auto& r : d.test.records)
      for (int k = 0; k < cfg_.eval.real_draws; ++k) {
        real.prompts.push_back(r.prompt);
        real.motions.push_back(generate_ground_truth(
            r.prompt, cfg_.domain.domain.frames,
            derive_seed(seed, {static_cast<std::uint64_t>(r.prompt.prompt_id), static_cast<std::uint64_t>(k)}),
            cfg_.domain.domain));
      }
    return real;
  }

  std::vector<PromptSpec> test_prompts(const DatasetSplits& d) const {
    std::vector<PromptSpec> p;
    for (const auto& r : d.test.records) p.push_back(r.prompt);
    return p;
  }

  std::unique_ptr<Scorer> scorer(ScorerKind k, const JointEmbedder& e) const {
    if (k == ScorerKind::oracle) return std::make_unique<OracleScorer>();
    return std::make_unique<LearnedScorer>(e, ranker_hash());
  }

  json provenance() const {
    json p = {{"config_hash", config_hash(cfg_)}};
    const std::string base = diffusion_stage(cfg_.align.target);
    if (ups_.count(base)) p["base_checkpoint"] = artifact_hash(base, "generator.ckpt");
    if (ups_.count("build-pam")) p["pam_hash"] = artifact_hash("build-pam", "pam.jsonl");
    return p;
  }

  // ---- stages ----

  void gen_data() {
    const DatasetSplits d = build_dataset(cfg_.domain.domain.n_prompts,
                                          stage_seed(cfg_, 0x44415441, cfg_.domain.seed), cfg_.domain.domain);
    save_dataset(dir_, d);
    for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "norm_stats.json"})
      outputs_[f] = sha256_hex(read_file(dir_ / f));
    extra_ = {{"train", d.train.records.size()}, {"val", d.val.records.size()}, {"test", d.test.records.size()}};
  }

  void train_vae_stage() {
    VaeConfig vc = cfg_.vae;
    vc.seed = stage_seed(cfg_, 0x564145, vc.seed);
    const auto r = train_vae(dataset().train, vc);
    Checkpoint ck = r.vae.to_checkpoint();
    ck.metadata["config_hash"] = section_hash(cfg_, "vae");
    ck.metadata["seed"] = vc.seed;
    ck.metadata["steps"] = vc.steps;
    emit("vae.ckpt", serialize_checkpoint(ck));
    emit("loss.jsonl", loss_log(r.loss_history));
    if (!r.loss_history.empty()) extra_["final_loss"] = r.loss_history.back();
  }

  void train_diffusion_stage(SpaceKind space) {
    DiffusionConfig dc = space == SpaceKind::raw ? cfg_.diffusion_raw : cfg_.diffusion_latent;
    dc.seed = stage_seed(cfg_, space == SpaceKind::raw ? 0x524157 : 0x4c4154, dc.seed);
    std::optional<Vae> vae;
    if (space == SpaceKind::latent) vae = Vae::from_checkpoint(load_checkpoint(artifact("train-vae", "vae.ckpt")));
    const auto r = train_diffusion(dataset().train, dc, vae ? &*vae : nullptr);
    Checkpoint ck = r.generator.to_checkpoint();
    ck.metadata["config_hash"] = section_hash(cfg_, space == SpaceKind::raw ? "diffusion_raw" : "diffusion_latent");
    ck.metadata["seed"] = dc.seed;
    ck.metadata["steps"] = dc.steps;
    emit("generator.ckpt", serialize_checkpoint(ck));
    emit("loss.jsonl", loss_log(r.loss_history));
    if (!r.loss_history.empty()) extra_["final_loss"] = r.loss_history.back();
  }

  void train_ranker_stage() {
    RankerConfig rc = cfg_.ranker;
    rc.seed = stage_seed(cfg_, 0x524e4b, rc.seed);
    const auto r = train_ranker(dataset().train, rc);
    Checkpoint ck = r.embedder.to_checkpoint();
    ck.metadata["config_hash"] = section_hash(cfg_, "ranker");
    ck.metadata["seed"] = rc.seed;
    ck.metadata["steps"] = rc.steps;
    emit("ranker.ckpt", serialize_checkpoint(ck));
    emit("loss.jsonl", loss_log(r.loss_history));
    if (!r.loss_history.empty()) extra_["final_loss"] = r.loss_history.back();
  }

  PamDataset make_pam(ScorerKind kind) const {
    const DatasetSplits d = dataset();
    std::vector<Generator> gens;
    std::vector<PamGenerator> pg;
    for (auto s : cfg_.pam.generators) gens.push_back(generator(s));
    for (std::size_t i = 0; i < gens.size(); ++i)
      pg.push_back({&gens[i], artifact_hash(diffusion_stage(cfg_.pam.generators[i]), "generator.ckpt")});
    const JointEmbedder e = embedder();
    const auto sc = scorer(kind, e);
    return build_pam(pg, pam_prompts(d), cfg_.pam.K, *sc, stage_seed(cfg_, 0x50414d, cfg_.pam.seed));
  }

  void build_pam_stage() {
    const PamDataset pam = make_pam(cfg_.pam.scorer);
    emit("pam.jsonl", serialize_pam(pam));
    extra_ = {{"records", pam.records.size()}, {"ranker_id", pam.manifest.ranker_id},
              {"content_hash", pam.manifest.content_hash}};
  }

  AlignResult run_alignment(const AlignmentConfig& ac, ScorerKind scorer_kind, const PamDataset* pam) const {
    const DatasetSplits d = dataset();
    const Generator base = generator(cfg_.align.target);
    AlignmentConfig run = ac;
    run.seed = stage_seed(cfg_, 0x414c4e, ac.seed);
    AlignProvenance prov{artifact_hash(diffusion_stage(cfg_.align.target), "generator.ckpt"), ""};
    const GtSource gt = gt_source(d.train);
    if (run.online) {
      const JointEmbedder e = embedder();
      const auto sc = scorer(scorer_kind, e);
      std::vector<PromptSpec> prompts;
      const auto& recs = d.train.records;
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg_.align.online_prompts), recs.size());
      for (std::size_t i = 0; i < n; ++i) prompts.push_back(recs[i * recs.size() / n].prompt);
      return align_online(base, prompts, *sc, gt, run, prov);
    }
    prov.pam_hash = pam->manifest.content_hash;
    return align_offline(base, *pam, gt, run, prov);
  }

  static Checkpoint aligned_checkpoint(const AlignResult& r, const std::string& cfg_hash) {
    Checkpoint ck = r.aligned.to_checkpoint();
    ck.metadata["provenance"] = r.provenance;
    ck.metadata["config_hash"] = cfg_hash;
    return ck;
  }

  void align_stage() {
    std::optional<PamDataset> pam;
    if (!cfg_.align.config.online) pam = load_pam(artifact("build-pam", "pam.jsonl"));
    const AlignResult r = run_alignment(cfg_.align.config, cfg_.pam.scorer, pam ? &*pam : nullptr);
    emit("aligned.ckpt", serialize_checkpoint(aligned_checkpoint(r, section_hash(cfg_, "align"))));
    emit("log.jsonl", serialize_log(r.log));
    extra_["provenance"] = r.provenance;
  }

  json protocol_json(const WinnerLoserReport& w) const {
    return {{"all", w.all.to_json()},
            {"winners", w.winners.to_json()},
            {"losers", w.losers.to_json()},
            {"fid_gap", w.fid_gap},
            {"oracle_fid_gap", w.oracle_fid_gap}};
  }

  void eval_stage() {
    const DatasetSplits d = dataset();
    const JointEmbedder e = embedder();
    const auto sc = scorer(cfg_.eval.protocol_scorer, e);
    const RealSet real = real_set(d);
    const auto prompts = test_prompts(d);
    const std::uint64_t gseed = stage_seed(cfg_, 0x4556, cfg_.eval.gen_seed);
    EvalOptions eo = cfg_.eval.options;
    eo.seed = stage_seed(cfg_, 0x454f, eo.seed);

    Generator base = generator(cfg_.align.target);
    const Checkpoint aligned_ck = load_checkpoint(artifact("align", "aligned.ckpt"));
    const Generator aligned = Generator::from_checkpoint(aligned_ck);
    const WinnerLoserReport wb = winner_loser_protocol(base, prompts, cfg_.eval.n_gen, *sc, real, e, eo, gseed);
    const WinnerLoserReport wa = winner_loser_protocol(aligned, prompts, cfg_.eval.n_gen, *sc, real, e, eo, gseed);

    GenerationGroups real_groups;
    {
      // A second ground-truth population for the "Real" row.
      const std::uint64_t s2 = stage_seed(cfg_, 0x5232, cfg_.eval.gen_seed);
      real_groups.prompts = prompts;
      for (const auto& p : prompts) {
        std::vector<MotionSequence> ms;
        for (int k = 0; k < std::max(2, cfg_.eval.n_gen); ++k)
          ms.push_back(generate_ground_truth(
              p, cfg_.domain.domain.frames,
              derive_seed(s2, {static_cast<std::uint64_t>(p.prompt_id), static_cast<std::uint64_t>(k)}),
              cfg_.domain.domain));
        real_groups.motions.push_back(std::move(ms));
      }
    }
    EvalReport real_rep = evaluate(real_groups, real, e, eo);
    real_rep.subset = "all";
    real_rep.model_id = "real";

    const json prov = provenance();
    json out = {{"provenance", prov},
                {"aligned_checkpoint", artifact_hash("align", "aligned.ckpt")},
                {"real", real_rep.to_json()},
                {"base", protocol_json(wb)},
                {"aligned", protocol_json(wa)}};
    std::string csv = csv_header() + ",base_checkpoint,pam_hash,config_hash\n";
    const std::string tail = "," + prov.value("base_checkpoint", "") + "," + prov.value("pam_hash", "") + "," +
                             prov.at("config_hash").get<std::string>() + "\n";
    csv += csv_row("real", real_rep) + tail;
    for (const auto& [name, w] : {std::pair<const char*, const WinnerLoserReport*>{"without_alignment", &wb},
                                  {"aligned", &wa}}) {
      csv += csv_row(name, w->all) + tail;
      csv += csv_row(name, w->winners) + tail;
      csv += csv_row(name, w->losers) + tail;
    }
    emit("eval.json", out.dump(2) + "\n");
    emit("eval.csv", csv);
  }

  void ablate_stage() {
    const std::vector<AblationVariant> grid = grid_doc_ ? parse_grid(*grid_doc_) : default_grid();
    const DatasetSplits d = dataset();
    const JointEmbedder e = embedder();
    const RealSet real = real_set(d);
    const auto prompts = test_prompts(d);
    const std::uint64_t gseed = stage_seed(cfg_, 0x4556, cfg_.eval.gen_seed);
    EvalOptions eo = cfg_.eval.options;
    eo.seed = stage_seed(cfg_, 0x454f, eo.seed);

    std::map<ScorerKind, PamDataset> pams;
    pams.emplace(cfg_.pam.scorer, load_pam(artifact("build-pam", "pam.jsonl")));
    const json prov = provenance();
    const std::string tail = "," + prov.value("base_checkpoint", "") + "," + prov.at("config_hash").get<std::string>();

    std::string csv =
        "name,Scorer,Stoch,GT_p,Online,PaM+,Top1,Top2,Top3,MMDist,Diversity,FID,MM,OracleFID,OracleScore,"
        "pam_hash,base_checkpoint,config_hash\n";
    auto row = [&](const std::string& name, const std::string& cols, const EvalReport& r, const std::string& pam_hash) {
      std::ostringstream o;
      o.precision(6);
      o << name << ',' << cols << ',' << r.top1.value << ',' << r.top2.value << ',' << r.top3.value << ','
        << r.mm_dist.value << ',' << r.diversity.value << ',' << r.fid.value << ','
        << (r.has_multimodality ? std::to_string(r.multimodality.value) : "") << ',' << r.oracle_fid.value << ','
        << r.oracle_score.value << ',' << pam_hash << tail << "\n";
      csv += o.str();
    };

    const Generator base = generator(cfg_.align.target);
    row("without_alignment", ",,,,", evaluate(generate_groups(base, prompts, cfg_.eval.n_gen, gseed), real, e, eo),
        "");
    json rows = json::array();
    for (const auto& v : grid) {
      AlignmentConfig ac = cfg_.align.config;
      ac.selection = v.selection;
      ac.gt_p = v.gt_p;
      ac.online = v.online;
      ac.pam_plus = v.pam_plus;
      const PamDataset* pam = nullptr;
      if (!v.online) {
        if (!pams.count(v.scorer)) pams.emplace(v.scorer, make_pam(v.scorer));
        pam = &pams.at(v.scorer);
      }
      const AlignResult r = run_alignment(ac, v.scorer, pam);
      const EvalReport rep = evaluate(generate_groups(r.aligned, prompts, cfg_.eval.n_gen, gseed), real, e, eo);
      std::ostringstream cols;
      cols << to_string(v.scorer) << ',' << (v.selection == Selection::stochastic ? "on" : "off") << ',' << v.gt_p
           << ',' << (v.online ? "on" : "off") << ',' << (v.pam_plus ? "on" : "off");
      const std::string pam_hash = pam ? pam->manifest.content_hash : "";
      row(v.name, cols.str(), rep, pam_hash);
      rows.push_back({{"name", v.name}, {"report", rep.to_json()}, {"pam_hash", pam_hash},
                      {"aligned_checkpoint", checkpoint_hash(aligned_checkpoint(r, section_hash(cfg_, "align")))}});
    }
    emit("ablation.csv", csv);
    emit("ablation.json", json({{"provenance", prov}, {"rows", rows}}).dump(2) + "\n");
  }

  void report_stage() {
    const json ev = json::parse(read_file(artifact("eval", "eval.json")));
    json rep = {{"provenance", ev.at("provenance")}, {"config_hash", config_hash(cfg_)}};
    auto gap = [](const json& p) {
      return json{{"fid_gap", p.at("fid_gap")}, {"oracle_fid_gap", p.at("oracle_fid_gap")}};
    };
    rep["winner_loser"] = {{"base", gap(ev.at("base"))}, {"aligned", gap(ev.at("aligned"))}};
    rep["reports"] = {{"real", ev.at("real")}, {"base", ev.at("base").at("all")}, {"aligned", ev.at("aligned").at("all")}};
    std::string csv = read_file(artifact("eval", "eval.csv"));
    if (ups_.count("ablate")) {
      rep["ablation"] = json::parse(read_file(artifact("ablate", "ablation.json"))).at("rows");
      csv += "\n" + read_file(artifact("ablate", "ablation.csv"));
    }
    emit("report.json", rep.dump(2) + "\n");
    emit("report.csv", csv);
  }

  const PipelineOptions& opt_;
  const RunConfig& cfg_;
  fs::path dir_;
  json outputs_ = json::object();
  json extra_ = json::object();
  std::map<std::string, json> ups_;
  std::optional<json> grid_doc_;
  mutable std::optional<DatasetSplits> data_;
};

}  // namespace

std::string expected_stage_key(const RunConfig& cfg, const std::string& stage) {
  return sha256_hex(key_document(cfg, stage, "").dump());
}

StageResult run_stage(const std::string& stage, const PipelineOptions& opt) {
  if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
    throw ConfigError("unknown stage '" + stage + "'");
  Stages s(opt);
  return s.run(stage);
}

std::vector<StageResult> run_pipeline(const PipelineOptions& opt) {
  std::vector<std::string> order{"gen-data", "train-vae"};
  for (auto g : {SpaceKind::raw, SpaceKind::latent}) {
    const bool needed = g == opt.config.align.target ||
                        std::find(opt.config.pam.generators.begin(), opt.config.pam.generators.end(), g) !=
                            opt.config.pam.generators.end();
    if (needed) order.push_back(diffusion_stage(g));
  }
  order.push_back("train-ranker");
  if (!opt.config.align.config.online) order.push_back("build-pam");
  for (const char* s : {"align", "eval", "report"}) order.push_back(s);
  std::vector<StageResult> out;
  for (const auto& s : order) out.push_back(run_stage(s, opt));
  return out;
}

namespace {

AblationVariant variant_from_json(const json& j, const std::string& fallback_name) {
  static const std::set<std::string> keys{"name", "scorer", "stochastic", "gt_p", "online", "pam_plus"};
  if (!j.is_object()) throw ConfigError("grid variant must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ConfigError("unknown grid key '" + it.key() + "'");
  AblationVariant v;
  try {
    v.name = j.value("name", fallback_name);
    v.scorer = scorer_from_string(j.value("scorer", std::string("learned")));
    v.selection = j.value("stochastic", false) ? Selection::stochastic : Selection::edge;
    v.gt_p = j.value("gt_p", 0.0);
    v.online = j.value("online", false);
    v.pam_plus = j.value("pam_plus", true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad grid variant: ") + e.what());
  }
  if (!(v.gt_p >= 0 && v.gt_p <= 1)) throw ConfigError("grid gt_p must be in [0, 1]");
  return v;
}

std::string auto_name(const AblationVariant& v) {
  std::ostringstream o;
  o << to_string(v.scorer) << (v.selection == Selection::stochastic ? "-stoch" : "-edge") << "-gt" << v.gt_p
    << (v.online ? "-online" : "") << (v.pam_plus ? "-pamplus" : "");
  return o.str();
}

}  // namespace

std::vector<AblationVariant> parse_grid(const json& j) {
  std::vector<AblationVariant> out;
  if (j.contains("variants")) {
    for (const auto& v : j.at("variants")) {
      AblationVariant a = variant_from_json(v, "");
      if (a.name.empty()) a.name = auto_name(a);
      out.push_back(a);
    }
  } else if (j.contains("axes")) {
    const json& ax = j.at("axes");
    static const std::set<std::string> keys{"scorer", "stochastic", "gt_p", "online", "pam_plus"};
    for (auto it = ax.begin(); it != ax.end(); ++it)
      if (!keys.count(it.key())) throw ConfigError("unknown grid axis '" + it.key() + "'");
    auto axis = [&](const char* k, json def) { return ax.contains(k) ? ax.at(k) : json::array({def}); };
    for (const auto& sc : axis("scorer", "learned"))
      for (const auto& st : axis("stochastic", false))
        for (const auto& gt : axis("gt_p", 0.0))
          for (const auto& on : axis("online", false))
            for (const auto& pp : axis("pam_plus", true)) {
              AblationVariant a = variant_from_json(
                  {{"scorer", sc}, {"stochastic", st}, {"gt_p", gt}, {"online", on}, {"pam_plus", pp}}, "");
              a.name = auto_name(a);
              out.push_back(a);
            }
  } else {
    throw ConfigError("grid needs 'variants' or 'axes'");
  }
  if (out.empty()) throw ConfigError("grid is empty");
  std::set<std::string> names;
  for (const auto& v : out)
    if (!names.insert(v.name).second) throw ConfigError("duplicate grid row name '" + v.name + "'");
  return out;
}

std::vector<AblationVariant> default_grid() {
  return parse_grid(json{{"axes", {{"scorer", {"learned", "oracle"}}, {"stochastic", {false, true}}}}});
}

}  // namespace mdpo
