#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mdpo/checkpoint.hpp"
#include "mdpo/config.hpp"
#include "mdpo/diffusion.hpp"
#include "mdpo/error.hpp"
#include "mdpo/metrics.hpp"
#include "mdpo/pam.hpp"
#include "mdpo/pipeline.hpp"
#include "mdpo/ranker.hpp"

#include <optional>

namespace py = pybind11;
using namespace mdpo;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

MotionSequence motion_of(const MotionMat& data, int fps) {
  if (data.cols() != kFeatures) throw ContractError("motion must have " + std::to_string(kFeatures) + " columns");
  return MotionSequence{data, fps};
}

PipelineOptions options(const std::filesystem::path& out, const py::object& config,
                        const std::optional<std::filesystem::path>& grid) {
  PipelineOptions opt;
  opt.out = out;
  opt.grid = grid;
  if (py::isinstance<py::dict>(config)) opt.config = config_from_json(from_py(config));
  else if (!config.is_none()) opt.config = load_config(config.cast<std::filesystem::path>());
  return opt;
}

py::dict stage_dict(const StageResult& r) {
  py::dict d;
  d["stage"] = r.stage;
  d["key"] = r.key;
  d["skipped"] = r.skipped;
  d["summary"] = to_py(r.summary);
  return d;
}

py::dict pair_dict(const PreferencePair& p) {
  py::dict d;
  d["winner"] = p.winner;
  d["loser"] = p.loser;
  d["winner_rank"] = p.winner_rank;
  d["loser_rank"] = p.loser_rank;
  d["winner_score"] = p.winner_score;
  d["loser_score"] = p.loser_score;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mdpo, m) {
  m.doc() = "Preference alignment of text-conditioned motion diffusion models on a synthetic skeleton domain";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<BuildError>(m, "BuildError", base.ptr());
  py::register_exception<PipelineError>(m, "PipelineError", base.ptr());
  py::register_exception<StalenessError>(m, "StalenessError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  m.attr("FEATURES") = kFeatures;
  m.attr("VOCAB_SIZE") = kVocabSize;

  py::enum_<Action>(m, "Action")
      .value("walk", Action::walk)
      .value("jump", Action::jump)
      .value("circle", Action::circle)
      .value("spin", Action::spin)
      .value("stand", Action::stand);

  py::class_<PromptSpec>(m, "PromptSpec")
      .def(py::init([](Action a, double speed, double amplitude, double direction, std::int64_t id) {
             PromptSpec p{a, speed, amplitude, direction, id};
             validate(p);
             return p;
           }),
           py::arg("action"), py::arg("speed") = 1.0, py::arg("amplitude") = 0.5, py::arg("direction") = 0.0,
           py::arg("prompt_id") = 0)
      .def_readwrite("action", &PromptSpec::action)
      .def_readwrite("speed", &PromptSpec::speed)
      .def_readwrite("amplitude", &PromptSpec::amplitude)
      .def_readwrite("direction", &PromptSpec::direction)
      .def_readwrite("prompt_id", &PromptSpec::prompt_id)
      .def("__repr__", [](const PromptSpec& p) { return "<PromptSpec '" + token_text(render_tokens(p)) + "'>"; });

  m.def("render_tokens", [](const PromptSpec& p) { return render_tokens(p).tokens; });
  m.def("token_text", [](const PromptSpec& p) { return token_text(render_tokens(p)); });

  m.def(
      "generate_ground_truth",
      [](const PromptSpec& p, int frames, std::uint64_t seed) { return generate_ground_truth(p, frames, seed).data; },
      py::arg("prompt"), py::arg("frames") = 60, py::arg("seed") = 0, "Noisy ground-truth motion, frames x FEATURES");
  m.def(
      "family_motion",
      [](Action a, double speed, double amplitude, double direction, int frames, int fps) {
        return family_motion(a, speed, amplitude, direction, frames, fps).data;
      },
      py::arg("action"), py::arg("speed"), py::arg("amplitude"), py::arg("direction") = 0.0, py::arg("frames") = 60,
      py::arg("fps") = 20, "Noiseless member of an action family");

  m.def(
      "oracle_judge",
      [](const PromptSpec& p, const MotionMat& motion, int fps) {
        const OracleJudgement j = oracle_judge(p, motion_of(motion, fps));
        py::dict d;
        d["score"] = j.score;
        d["realism_residual"] = j.realism_residual;
        d["attribute_mismatch"] = j.attribute_mismatch;
        d["speed"] = j.fit.speed;
        d["amplitude"] = j.fit.amplitude;
        d["path_curvature"] = j.fit.path_curvature;
        return d;
      },
      py::arg("prompt"), py::arg("motion"), py::arg("fps") = 20);
  m.def(
      "oracle_score",
      [](const PromptSpec& p, const MotionMat& motion, int fps) { return oracle_score(p, motion_of(motion, fps)); },
      py::arg("prompt"), py::arg("motion"), py::arg("fps") = 20);
  m.def(
      "oracle_features",
      [](const PromptSpec& p, const MotionMat& motion, int fps) { return oracle_features(p, motion_of(motion, fps)); },
      py::arg("prompt"), py::arg("motion"), py::arg("fps") = 20);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_property_readonly("T", &NoiseSchedule::steps)
      .def_readonly("betas", &NoiseSchedule::betas)
      .def_readonly("alphas", &NoiseSchedule::alphas)
      .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars);
  m.def(
      "make_schedule",
      [](const std::string& kind, int T, double beta_min, double beta_max) {
        return make_schedule(schedule_kind_from_string(kind), T, beta_min, beta_max);
      },
      py::arg("kind") = "linear", py::arg("T") = 100, py::arg("beta_min") = 1e-3, py::arg("beta_max") = 0.2);
  m.def("q_sample", &q_sample, py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("schedule"),
        "Forward noising; columns are examples");

  m.def(
      "fid",
      [](const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mean_b,
         const Eigen::MatrixXd& cov_b) { return fid({mean_a, cov_a, 0}, {mean_b, cov_b, 0}); },
      py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));
  m.def(
      "fid_from_samples",
      [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return fid(embedding_stats(a.transpose()), embedding_stats(b.transpose()));
      },
      py::arg("a"), py::arg("b"), "Frechet distance between two sample sets; rows are samples");

  m.def("pair_count", &pair_count, py::arg("n"));
  m.def(
      "select_pair",
      [](const std::vector<double>& scores, const std::string& selection, std::uint64_t seed) {
        RankedSet rs;
        rs.candidates = order_candidates(scores, std::vector<GeneratorTag>(scores.size(), GeneratorTag::latent));
        rs.motions.resize(scores.size());
        Rng rng(seed);
        return pair_dict(select_pair(rs, selection_from_string(selection), rng));
      },
      py::arg("scores"), py::arg("selection") = "edge", py::arg("seed") = 0,
      "Preference pair over candidates with the given scores; indices refer to the input order");

  py::class_<Generator>(m, "Generator")
      .def_static(
          "load", [](const std::filesystem::path& p) { return Generator::from_checkpoint(load_checkpoint(p)); },
          py::arg("path"))
      .def_property_readonly("space", [](const Generator& g) { return std::string(to_string(g.space)); })
      .def_property_readonly("state_dim", &Generator::state_dim)
      .def_property_readonly("T", [](const Generator& g) { return g.sched.steps(); })
      .def(
          "sample",
          [](const Generator& g, const std::vector<PromptSpec>& prompts, const std::vector<std::uint64_t>& seeds) {
            if (prompts.size() != seeds.size()) throw ContractError("one seed per prompt");
            std::vector<TokenSeq> conds;
            for (const auto& p : prompts) conds.push_back(render_tokens(p));
            std::vector<MotionMat> out;
            py::gil_scoped_release nogil;
            for (auto& s : g.sample(conds, seeds)) out.push_back(std::move(s.motion.data));
            return out;
          },
          py::arg("prompts"), py::arg("seeds"));

  m.def(
      "checkpoint_hash", [](const std::filesystem::path& p) { return checkpoint_hash(load_checkpoint(p)); },
      py::arg("path"));
  m.def(
      "load_pam",
      [](const std::filesystem::path& p) {
        const PamDataset pam = load_pam(p);
        py::dict d;
        d["records"] = pam.records.size();
        d["K"] = pam.manifest.K;
        d["ranker_id"] = pam.manifest.ranker_id;
        d["content_hash"] = pam.manifest.content_hash;
        d["generator_checkpoints"] = pam.manifest.generator_checkpoints;
        return d;
      },
      py::arg("path"), "Validated manifest summary of a preference set");

  m.def("stage_names", &stage_names);
  m.def(
      "default_config", [] { return to_py(config_to_json(RunConfig{})); }, "Default run configuration as a dict");
  m.def(
      "run_stage",
      [](const std::string& stage, const std::filesystem::path& out, const py::object& config,
         const std::optional<std::filesystem::path>& grid) {
        const PipelineOptions opt = options(out, config, grid);
        StageResult r;
        {
          py::gil_scoped_release nogil;
          r = run_stage(stage, opt);
        }
        return stage_dict(r);
      },
      py::arg("stage"), py::arg("out"), py::arg("config") = py::none(), py::arg("grid") = py::none(),
      "Run one stage; config is a dict, a path to a JSON file, or None for defaults");
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& out, const py::object& config) {
        const PipelineOptions opt = options(out, config, std::nullopt);
        std::vector<StageResult> rs;
        {
          py::gil_scoped_release nogil;
          rs = run_pipeline(opt);
        }
        py::list l;
        for (const auto& r : rs) l.append(stage_dict(r));
        return l;
      },
      py::arg("out"), py::arg("config") = py::none());
}
