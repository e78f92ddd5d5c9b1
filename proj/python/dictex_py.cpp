// Python bindings. Structured values cross the boundary as JSON text and are
// decoded on the Python side, so the module needs no type casters for json.

#include <fstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dictex/annotation.hpp"
#include "dictex/corpus.hpp"
#include "dictex/error.hpp"
#include "dictex/exemplify.hpp"
#include "dictex/metrics.hpp"
#include "dictex/mock_backends.hpp"
#include "dictex/oxfordeval.hpp"
#include "dictex/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sentence_metrics_json(const std::string& sentence) {
  const auto m = dictex::metrics::sentence_metrics(sentence);
  return json{{"words", m.word_count}, {"syllables", m.syllable_count}, {"fkgl", m.fkgl}}.dump();
}

std::string summarize_json(const std::vector<std::string>& sentences) {
  return dictex::metrics::to_json(dictex::metrics::summarize(sentences)).dump();
}

std::string load_senses_json(const std::string& dataset, const std::string& split) {
  const auto which = dictex::corpus::parse_split(split);
  if (!which) throw dictex::Error(dictex::ErrorCode::kConfig, "unknown split '" + split + "'");
  std::ifstream in(dataset);
  if (!in) throw dictex::Error(dictex::ErrorCode::kIo, "cannot open " + dataset);
  auto parsed = dictex::corpus::parse_dataset(in);
  dictex::corpus::check_malformed_ratio(parsed);
  std::vector<dictex::corpus::RawEntry> entries;
  for (auto& e : parsed.entries) {
    if (e.split == *which) entries.push_back(std::move(e));
  }
  const auto senses = dictex::corpus::dedup_inflections(entries).senses;
  const auto stats = dictex::corpus::split_stats(senses);
  json out{{"senses", json::array()},
           {"stats",
            {{"word_senses", stats.word_senses},
             {"unique_words", stats.unique_words},
             {"unique_lemmas", stats.unique_lemmas},
             {"avg_examples", stats.avg_examples}}},
           {"malformed", parsed.malformed.size()}};
  for (const auto& s : senses) out["senses"].push_back(dictex::corpus::to_json(s));
  return out.dump();
}

py::object judge_label(const std::string& raw, bool flipped) {
  const auto label = dictex::oxfordeval::unflip(dictex::oxfordeval::parse_verdict(raw), flipped);
  if (!label) return py::none();
  return py::str(*label == dictex::oxfordeval::Label::kCandidate ? "candidate" : "baseline");
}

std::string win_rate_json(const std::string& records_json) {
  std::vector<dictex::oxfordeval::EvalRecord> records;
  for (const auto& j : json::parse(records_json)) records.push_back(dictex::oxfordeval::eval_record_from_json(j));
  return dictex::oxfordeval::to_json(dictex::oxfordeval::win_rate(records)).dump();
}

std::string score_json(const std::string& sentence, const std::string& word, const std::string& script_json) {
  dictex::backends::ScriptedMlmBackend mlm(dictex::backends::MlmScript::from_json(json::parse(script_json)));
  const auto r = dictex::exemplify::exemplification_score(sentence, word, mlm);
  return json{{"score", r.score}, {"log_score", r.log_score}, {"mask_count", r.mask_count}}.dump();
}

dictex::pipeline::Runner make_runner(const std::string& config_path) {
  auto config = dictex::pipeline::RunConfig::load(config_path);
  config.validate();
  auto backends = dictex::pipeline::make_backends(config);
  return dictex::pipeline::Runner(std::move(config), std::move(backends));
}

std::string run_json(const std::string& config_path, const std::vector<std::string>& stages) {
  auto runner = make_runner(config_path);
  std::vector<dictex::pipeline::StageOutcome> outcomes;
  if (stages.empty()) {
    outcomes = runner.run_all();
  } else {
    for (const auto& s : stages) outcomes.push_back(runner.run_stage(dictex::pipeline::parse_stage(s)));
  }
  json out = json::array();
  for (const auto& o : outcomes) {
    out.push_back({{"stage", dictex::pipeline::to_string(o.stage)}, {"skipped", o.skipped}, {"outputs", o.outputs}});
  }
  return out.dump();
}

std::string consensus_json(const std::string& session_dir) {
  const auto session = dictex::annotation::Session::load(session_dir);
  const dictex::annotation::LabelStore store(session, fs::path(session_dir) / "labels.log");
  const auto result = dictex::annotation::consensus_filter(session, store.records());
  json kept = json::object();
  for (const auto& [id, label] : result.kept) {
    kept[id] = label == dictex::oxfordeval::Label::kCandidate ? "candidate" : "baseline";
  }
  return json{{"kept", kept},
              {"fully_annotated", result.fully_annotated},
              {"excluded_incomplete", result.excluded_incomplete},
              {"agreement", result.agreement}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_dictex, m) {
  m.doc() = "Dictionary exemplification pipeline";

  static py::exception<dictex::Error> error(m, "DictexError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const dictex::Error& e) {
      py::set_error(error, e.what());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("word_count", [](const std::string& s) { return dictex::metrics::word_count(s); });
  m.def("syllable_count", [](const std::string& w) { return dictex::metrics::syllable_count(w); });
  m.def("fkgl", [](const std::string& s) { return dictex::metrics::fkgl(s); });
  m.def("_sentence_metrics", &sentence_metrics_json);
  m.def("_summarize", &summarize_json);
  m.def("sense_id", [](const std::string& lemma, const std::string& pos, const std::string& definition) {
    return dictex::corpus::sense_id(lemma, pos, definition);
  });
  m.def("_load_senses", &load_senses_json, py::arg("dataset"), py::arg("split"));
  m.def("judge_label", &judge_label, py::arg("raw"), py::arg("flipped"));
  m.def("flipped", [](std::uint64_t seed, std::size_t index) { return dictex::oxfordeval::PresentationRng(seed).flipped(index); });
  m.def("_win_rate", &win_rate_json);
  m.def("_exemplification_score", &score_json);
  m.def("_run", &run_json, py::arg("config"), py::arg("stages"), py::call_guard<py::gil_scoped_release>());
  m.def("audit", [](const std::string& config) { return make_runner(config).audit(); });
  m.def("_consensus", &consensus_json);
}
