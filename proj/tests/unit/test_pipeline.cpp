#include <doctest.h>

#include "mdpo/config.hpp"
#include "mdpo/error.hpp"
#include "mdpo/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mdpo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config() {
  return json::parse(R"j({
    "domain": {"n_prompts": 1000},
    "vae": {"steps": 20, "hidden": 32},
    "diffusion_raw": {"steps": 10, "hidden": 32, "depth": 1, "T": 10},
    "diffusion_latent": {"steps": 10, "hidden": 32, "depth": 1, "T": 10},
    "ranker": {"steps": 20, "motion_hidden": 32, "text_hidden": 16},
    "pam": {"n_prompts": 12, "K": 2},
    "align": {"steps": 3, "batch": 4, "online_prompts": 8},
    "eval": {"n_gen": 2, "real_draws": 1, "bootstrap": 2}
  })j");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdpo_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(MDPO_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("configuration documents") {
  const RunConfig def;
  CHECK(config_to_json(config_from_json(config_to_json(def))) == config_to_json(def));
  const RunConfig c = config_from_json(tiny_config());
  CHECK(c.vae.steps == 20);
  CHECK(c.vae.latent_dim == 16);
  CHECK(c.diffusion_raw.space == SpaceKind::raw);
  CHECK(c.diffusion_latent.space == SpaceKind::latent);
  CHECK(config_hash(c) != config_hash(def));
  CHECK(section_hash(c, "ranker") != section_hash(def, "ranker"));
  RunConfig c2 = c;
  c2.vae.steps = 99;
  CHECK(section_hash(c, "ranker") == section_hash(c2, "ranker"));
  CHECK(section_hash(c, "vae") != section_hash(c2, "vae"));
  CHECK_THROWS_AS(section_hash(c, "report"), ConfigError);

  CHECK_THROWS_AS(config_from_json(json::parse(R"j({"vae": {"stepz": 3}})j")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"j({"bogus": {}})j")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"j({"vae": {"steps": "many"}})j")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"j({"align": {"freeze_policy": "last_layers(0)"}})j")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"j({"pam": {"generators": ["latent", "latent"]}})j")), ConfigError);
  CHECK(alignment_from_json(json::parse(R"j({"gt_p": 0.5})j")).gt_p == 0.5);
}

TEST_CASE("ablation grids") {
  CHECK(default_grid().size() == 4);
  const auto axes = parse_grid(json::parse(R"j({"axes": {"scorer": ["learned", "oracle"], "gt_p": [0, 0.25, 0.5]}})j"));
  CHECK(axes.size() == 6);
  const auto v = parse_grid(json::parse(R"j({"variants": [{"name": "a", "online": true}]})j"));
  REQUIRE(v.size() == 1);
  CHECK(v[0].online);
  CHECK_THROWS_AS(parse_grid(json::parse(R"j({"variants": [{"name": "a"}, {"name": "a"}]})j")), ConfigError);
  CHECK_THROWS_AS(parse_grid(json::parse(R"j({"axes": {"colour": ["red"]}})j")), ConfigError);
}

TEST_CASE("staged pipeline") {
  PipelineOptions opt;
  opt.config = config_from_json(tiny_config());
  opt.out = fresh_dir("pipe_a");

  CHECK_THROWS_AS(run_stage("train-vae", opt), PipelineError);
  CHECK_THROWS_AS(run_stage("no-such-stage", opt), ConfigError);

  const auto first = run_pipeline(opt);
  REQUIRE(first.size() == stage_names().size() - 1);  // ablate runs on request
  for (const auto& r : first) {
    CHECK_FALSE(r.skipped);
    CHECK(r.key == expected_stage_key(opt.config, r.stage));
    CHECK(fs::exists(opt.out / "stages" / (r.stage + ".json")));
  }
  const auto second = run_pipeline(opt);
  for (const auto& r : second) CHECK(r.skipped);

  const auto abl = run_stage("ablate", opt);
  const auto abl_dir = opt.out / abl.summary.at("dir").get<std::string>();
  CHECK(fs::exists(abl_dir / "ablation.csv"));
  CHECK(run_stage("ablate", opt).skipped);

  const auto eval_dir = opt.out / first[7].summary.at("dir").get<std::string>();
  CHECK(fs::exists(eval_dir / "eval.json"));
  CHECK(fs::exists(eval_dir / "eval.csv"));
  const json ev = json::parse(slurp(eval_dir / "eval.json"));
  CHECK(ev.dump().find("winners") != std::string::npos);

  // Same configuration in another directory gives byte-identical artifacts.
  PipelineOptions other = opt;
  other.out = fresh_dir("pipe_b");
  for (const char* stage : {"gen-data", "train-vae", "train-diffusion-latent"}) run_stage(stage, other);
  REQUIRE(first[3].stage == "train-diffusion-latent");
  const auto dir_a = opt.out / first[3].summary.at("dir").get<std::string>();
  CHECK(dir_a.filename() == first[3].key.substr(0, 16));
  CHECK(slurp(dir_a / "generator.ckpt") == slurp(other.out / first[3].summary.at("dir").get<std::string>() / "generator.ckpt"));

  // Downstream stages refuse upstream outputs from a different configuration.
  PipelineOptions changed = opt;
  changed.config.vae.steps = 21;
  CHECK_THROWS_AS(run_stage("train-diffusion-latent", changed), StalenessError);
  CHECK(run_stage("train-vae", changed).skipped == false);
  CHECK_NOTHROW(run_stage("train-diffusion-latent", changed));
  // A different global seed also moves every key.
  PipelineOptions reseeded = opt;
  reseeded.config.seed = 2;
  CHECK(expected_stage_key(reseeded.config, "gen-data") != expected_stage_key(opt.config, "gen-data"));

  // Tampered artifacts are detected when read and rebuilt when rerun.
  const auto data_dir = opt.out / first[0].summary.at("dir").get<std::string>();
  {
    std::ofstream f(data_dir / "train.jsonl", std::ios::app);
    f << "x";
  }
  fs::remove(opt.out / "stages" / "train-ranker.json");
  CHECK_THROWS_AS(run_stage("train-ranker", opt), IntegrityError);
  CHECK_FALSE(run_stage("gen-data", opt).skipped);
  CHECK(run_stage("train-ranker", opt).key == first[4].key);

  fs::remove_all(opt.out);
  fs::remove_all(other.out);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = fresh_dir("cli");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "bad.json");
    f << R"j({"vae": {"unknown_key": 1}})j";
  }
  {
    std::ofstream f(dir / "tiny.json");
    f << tiny_config().dump();
  }
  const std::string out = " --out " + (dir / "run").string();
  CHECK(run_cli("--config " + (dir / "bad.json").string() + out + " --stage gen-data") == exit_code(ErrorKind::configuration));
  CHECK(run_cli("--config " + (dir / "tiny.json").string() + out + " --stage train-vae") == exit_code(ErrorKind::pipeline));
  CHECK(run_cli("--config " + (dir / "tiny.json").string() + out + " --stage train-diffusion") ==
        exit_code(ErrorKind::configuration));
  CHECK(run_cli("--config " + (dir / "tiny.json").string() + out + " --stage gen-data") == 0);
  CHECK(run_cli("--config " + (dir / "tiny.json").string() + out + " --stage train-vae --seed 3") ==
        exit_code(ErrorKind::staleness));
  CHECK(run_cli("--config " + (dir / "missing.json").string() + out) == exit_code(ErrorKind::configuration));
  fs::remove_all(dir);
}
