// critgen._core: corpus, parsing, metrics, training, retrieval and
// generation. Configuration is the same flat key set the CLI uses; results
// that have a JSON form in the library come back as Python dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "critgen/config.hpp"
#include "critgen/error.hpp"
#include "critgen/generation.hpp"
#include "critgen/lifecycle.hpp"
#include "critgen/rng.hpp"

namespace py = pybind11;
using namespace critgen;

PYBIND11_MAKE_OPAQUE(critgen::Corpus)

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

std::string value_text(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
    std::string out;
    for (const auto& item : v) out += (out.empty() ? "" : ",") + py::str(item).cast<std::string>();
    return out;
  }
  return py::str(v).cast<std::string>();
}

RunConfig run_config(const py::dict& values) {
  std::map<std::string, std::string> m;
  for (const auto& [k, v] : values) m[py::str(k).cast<std::string>()] = value_text(v);
  return validate_config(m);
}

const TrialDocument& find_trial(const Corpus& corpus, const std::string& id) {
  for (const auto& t : corpus)
    if (t.trial_id == id) return t;
  throw ConfigError("no trial '" + id + "' in the corpus");
}

py::dict trial_dict(const TrialDocument& t) {
  py::list inc, exc;
  for (const auto& c : t.inclusion) inc.append(c.text);
  for (const auto& c : t.exclusion) exc.append(c.text);
  py::dict d;
  d["trial_id"] = t.trial_id;
  d["title"] = t.title;
  d["disease"] = t.disease;
  d["treatment"] = t.treatment;
  d["inclusion"] = inc;
  d["exclusion"] = exc;
  return d;
}

std::vector<std::string> instruction_list(const RunConfig& c) {
  return c.instructions.empty() ? AttributeSchema::default_schema().tags() : c.instructions;
}

py::list epochs(const TrainResult& r) {
  py::list out;
  for (const auto& e : r.epochs) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["mean_loss"] = e.mean_loss;
    d["perplexity"] = e.perplexity;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "instruction-conditioned eligibility criteria generation";
#ifdef CRITGEN_VERSION
  m.attr("__version__") = CRITGEN_VERSION;
#endif

  static py::exception<Error> base(m, "CritgenError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("config_keys", &config_keys);
  m.def(
      "resolve_config",
      [](const py::dict& values) { return render_config(run_config(values)); },
      py::arg("values") = py::dict(), "Validated config rendered as YAML text.");
  m.def("derive_seed", &derive_seed, py::arg("parent"), py::arg("tag"), py::arg("index") = 0);

  py::class_<Corpus>(m, "Corpus")
      .def_static(
          "synthesize",
          [](std::size_t n_trials, std::uint64_t seed) {
            SynthConfig sc;
            sc.n_trials = n_trials;
            sc.seed = seed;
            return synthesize_corpus(sc);
          },
          py::arg("n_trials"), py::arg("seed"))
      .def_static("load", [](const std::filesystem::path& p) { return load_corpus(p); })
      .def_static("ingest", [](const std::filesystem::path& p) { return ingest_registry(p); })
      .def("save", [](const Corpus& c, const std::filesystem::path& p) { save_corpus(c, p); })
      .def("__len__", [](const Corpus& c) { return c.size(); })
      .def("__getitem__", [](const Corpus& c, const std::string& id) { return trial_dict(find_trial(c, id)); })
      .def_property_readonly("trial_ids",
                             [](const Corpus& c) {
                               std::vector<std::string> ids;
                               for (const auto& t : c) ids.push_back(t.trial_id);
                               return ids;
                             })
      .def(
          "split",
          [](const Corpus& c, std::uint64_t seed, double train, double valid, double test) {
            const auto s = split(c, SplitRatios{train, valid, test}, seed);
            return py::make_tuple(select_trials(c, s.train), select_trials(c, s.valid), select_trials(c, s.test));
          },
          py::arg("seed"), py::arg("train") = 0.72, py::arg("valid") = 0.08, py::arg("test") = 0.20)
      .def("select", [](const Corpus& c, const std::vector<std::string>& ids) { return select_trials(c, ids); });

  m.def(
      "parse_criterion",
      [](const std::string& text) {
        std::vector<std::string> out;
        for (const auto& r : CriteriaParser{}.parse(text)) out.push_back(to_string(r));
        return out;
      },
      "Relations of one criterion, rendered as text.");

  m.def("bleu1", [](const std::string& cand, const std::vector<std::string>& refs) {
    std::vector<Tokens> r;
    for (const auto& s : refs) r.push_back(metric_tokens(s));
    return bleu1(metric_tokens(cand), r);
  });
  m.def("rouge_l", [](const std::string& c, const std::string& r) { return rouge_l(metric_tokens(c), metric_tokens(r)); });
  m.def("meteor", [](const std::string& c, const std::string& r) { return meteor(metric_tokens(c), metric_tokens(r)); });
  m.def(
      "cider",
      [](const std::string& cand, const std::vector<std::string>& refs, const std::vector<std::string>& documents) {
        std::vector<Tokens> r, docs;
        for (const auto& s : refs) r.push_back(metric_tokens(s));
        for (const auto& s : documents) docs.push_back(metric_tokens(s));
        return cider(metric_tokens(cand), r, CiderIdf(docs));
      },
      py::arg("candidate"), py::arg("references"), py::arg("documents"));

  py::class_<ModelState>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_checkpoint(s, p); })
      .def_property_readonly("parameter_count", &ModelState::parameter_count)
      .def_property_readonly("instructions", [](const ModelState& s) { return s.registry.tags; })
      .def_property_readonly("vocab_size", [](const ModelState& s) { return s.vocab.size(); })
      .def_property_readonly("digest", [](const ModelState& s) { return backbone_digest(s); })
      .def("__eq__", [](const ModelState& a, const ModelState& b) { return a == b; });

  py::class_<KnowledgeStore>(m, "Store")
      .def_static(
          "build",
          [](const ModelState& model, const Corpus& corpus, const py::dict& config) {
            const auto c = run_config(config);
            return build_store(labeled_pairs(corpus, CriteriaParser{}, c.max_chain, model.registry.tags), model);
          },
          py::arg("model"), py::arg("corpus"), py::arg("config") = py::dict())
      .def_static("load", [](const std::filesystem::path& p) { return KnowledgeStore::load(p); })
      .def("save", [](const KnowledgeStore& s, const std::filesystem::path& p) { s.save(p); })
      .def("__len__", &KnowledgeStore::size)
      .def_property_readonly("dim", &KnowledgeStore::dim)
      .def_property_readonly("encoder_version", &KnowledgeStore::encoder_version)
      .def(
          "retrieve",
          [](const KnowledgeStore& s, const std::vector<float>& query, std::size_t k,
             std::optional<std::string> exclude_trial_id, std::optional<std::string> instruction) {
            py::list out;
            for (const auto& h : s.retrieve(query, k, exclude_trial_id, instruction)) {
              py::dict d;
              d["trial_id"] = h.entry->trial_id;
              d["instruction"] = h.entry->value.instruction;
              d["target"] = h.entry->value.target.text;
              d["similarity"] = h.similarity;
              out.append(d);
            }
            return out;
          },
          py::arg("query"), py::arg("k") = 1, py::arg("exclude_trial_id") = py::none(),
          py::arg("instruction") = py::none());

  m.def(
      "encode_setup",
      [](const ModelState& model, const Corpus& corpus, const std::string& trial_id) {
        return encode_setup(model, find_trial(corpus, trial_id).setup(), trial_id).values;
      },
      "Unit-norm setup embedding, the store's key space.");

  m.def(
      "pretrain",
      [](const Corpus& corpus, const py::dict& config) {
        const auto c = run_config(config);
        TrainResult log;
        std::optional<ModelState> model;
        {
          py::gil_scoped_release release;
          model = pretrain_model(corpus, pipeline_config(c), instruction_list(c), &log);
        }
        return py::make_tuple(std::move(*model), epochs(log));
      },
      py::arg("corpus"), py::arg("config") = py::dict(), "Returns (model, per-epoch losses).");

  m.def(
      "finetune",
      [](ModelState& model, KnowledgeStore& store, const Corpus& corpus, const py::dict& config) {
        const auto c = run_config(config);
        const auto pairs = labeled_pairs(corpus, CriteriaParser{}, c.max_chain, model.registry.tags);
        TrainResult log;
        {
          py::gil_scoped_release release;
          log = finetune_model(model, store, pairs, pipeline_config(c));
        }
        return epochs(log);
      },
      py::arg("model"), py::arg("store"), py::arg("corpus"), py::arg("config") = py::dict(),
      "Trains `model` in place and rekeys `store`.");

  m.def(
      "generate",
      [](const ModelState& model, const KnowledgeStore* store, const Corpus& corpus, const std::string& trial_id,
         const std::string& instruction, const py::dict& config) {
        const auto c = run_config(config);
        const auto p = pipeline_config(c);
        const auto& trial = find_trial(corpus, trial_id);
        if (instruction.empty())
          return to_py(to_json(generate_trial(model, store, trial_id, trial.setup(), c.max_new_tokens, p.sequence)));
        const auto req = criteria_request(trial, instruction, CriteriaParser{}, c.prefix_tokens);
        return to_py(to_json(generate_criteria(model, store, req, p.eval.generation, p.sequence)));
      },
      py::arg("model"), py::arg("store"), py::arg("corpus"), py::arg("trial_id"), py::arg("instruction") = "",
      py::arg("config") = py::dict(), "Criteria level with an instruction, greedy trial level without.");

  m.def(
      "evaluate",
      [](const ModelState& model, const KnowledgeStore* store, const Corpus& corpus, const py::dict& config) {
        const auto p = pipeline_config(run_config(config));
        nlohmann::json j;
        {
          py::gil_scoped_release release;
          j = to_json(evaluate(model, store, corpus, p.eval));
        }
        return to_py(j);
      },
      py::arg("model"), py::arg("store"), py::arg("corpus"), py::arg("config") = py::dict());

  m.def(
      "extend",
      [](ModelState& model, KnowledgeStore& store, const Corpus& corpus, const std::vector<std::string>& tags,
         const py::dict& config) {
        const auto c = run_config(config);
        extend_instructions(model, tags);
        const auto pairs = labeled_pairs(corpus, CriteriaParser{}, c.max_chain, tags);
        UpdateResult r;
        {
          py::gil_scoped_release release;
          r = incremental_update(model, store, pairs, pipeline_config(c));
        }
        py::list diff;
        for (const auto& d : r.diff) {
          py::dict e;
          e["tensor"] = d.name;
          e["changed_rows"] = d.changed_rows;
          e["max_abs_change"] = d.max_abs_change;
          diff.append(e);
        }
        py::dict out;
        out["diff"] = diff;
        out["store_upserts"] = r.store_upserts;
        out["epochs"] = epochs(r.training);
        return out;
      },
      py::arg("model"), py::arg("store"), py::arg("corpus"), py::arg("instructions"), py::arg("config") = py::dict(),
      "Registers new instructions and trains only their rows.");
}
