#include "dictex/pipeline.hpp"

#include <fstream>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "dictex/digest.hpp"
#include "dictex/error.hpp"
#include "dictex/exemplify.hpp"
#include "dictex/hashing.hpp"
#include "dictex/http_backends.hpp"
#include "dictex/io.hpp"
#include "dictex/metrics.hpp"
#include "dictex/mock_backends.hpp"
#include "dictex/oxfordeval.hpp"
#include "dictex/parallel.hpp"

namespace dictex::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kPreprocess: return "preprocess";
    case Stage::kGenerate: return "generate";
    case Stage::kScore: return "score";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kReport: return "report";
  }
  return "preprocess";
}

Stage parse_stage(std::string_view name) {
  for (auto s : all_stages()) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kConfig, "unknown stage '" + std::string(name) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> kStages{Stage::kPreprocess, Stage::kGenerate, Stage::kScore, Stage::kEvaluate,
                                          Stage::kReport};
  return kStages;
}

namespace {

CandidateSource parse_source(const std::string& s) {
  if (s == "llm") return CandidateSource::kLlm;
  if (s == "oxford") return CandidateSource::kOxford;
  if (s == "oxford_random") return CandidateSource::kOxfordRandom;
  if (s == "file") return CandidateSource::kFile;
  throw Error(ErrorCode::kConfig, "unknown generation source '" + s + "'");
}

std::string_view to_string(CandidateSource s) {
  switch (s) {
    case CandidateSource::kLlm: return "llm";
    case CandidateSource::kOxford: return "oxford";
    case CandidateSource::kOxfordRandom: return "oxford_random";
    case CandidateSource::kFile: return "file";
  }
  return "llm";
}

BaselineSource parse_baseline(const std::string& s) {
  if (s == "first") return BaselineSource::kFirst;
  if (s == "random") return BaselineSource::kRandom;
  if (s == "file") return BaselineSource::kFile;
  throw Error(ErrorCode::kConfig, "unknown baseline '" + s + "'");
}

std::string_view to_string(BaselineSource s) {
  switch (s) {
    case BaselineSource::kFirst: return "first";
    case BaselineSource::kRandom: return "random";
    case BaselineSource::kFile: return "file";
  }
  return "first";
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return resolve(base, j.at(key).get<std::string>());
}

json resolve_backend(json backend, const fs::path& base) {
  if (backend.is_object() && backend.contains("script") && backend["script"].is_string()) {
    backend["script"] = resolve(base, backend["script"].get<std::string>()).string();
  }
  return backend;
}

std::string template_digest(const std::optional<fs::path>& path) {
  return path ? sha256_file(*path) : std::string("builtin");
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    RunConfig c;
    if (!j.contains("seed")) throw Error(ErrorCode::kConfig, "seed is mandatory");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset = resolve(base_dir, j.at("dataset").get<std::string>());
    c.frequencies = optional_path(j, "frequencies", base_dir);
    if (j.contains("split")) {
      auto split = corpus::parse_split(j.at("split").get<std::string>());
      if (!split) throw Error(ErrorCode::kConfig, "unknown split");
      c.split = *split;
    }
    c.stage_dir = resolve(base_dir, j.value("stage_dir", std::string("run")));
    c.concurrency = j.value("concurrency", c.concurrency);

    const auto gen = j.value("generation", json::object());
    c.candidate_source = parse_source(gen.value("source", std::string("llm")));
    c.candidates_file = optional_path(gen, "candidates_file", base_dir);
    c.generation.num_sentences = gen.value("num_sentences", c.generation.num_sentences);
    c.generation.batching = genpipe::parse_batching(gen.value("batching", std::string("one_by_one")));
    c.generation.inputs = genpipe::parse_input_mode(gen.value("inputs", std::string("pos_and_def")));
    c.generation.max_retries = gen.value("max_retries", c.generation.max_retries);
    c.generation.params.temperature = gen.value("temperature", c.generation.params.temperature);
    c.generation.params.top_p = gen.value("top_p", c.generation.params.top_p);
    c.generation.params.top_k = gen.value("top_k", c.generation.params.top_k);
    c.generation.params.max_tokens = gen.value("max_tokens", c.generation.params.max_tokens);
    c.generation_template = optional_path(gen, "prompt_template", base_dir);

    const auto sel = j.value("selection", json::object());
    const auto criteria = sel.value("criteria", std::string("mlm"));
    if (criteria == "mlm") {
      c.selection = SelectionCriteria::kMlm;
    } else if (criteria == "first") {
      c.selection = SelectionCriteria::kFirst;
    } else {
      throw Error(ErrorCode::kConfig, "unknown selection criteria '" + criteria + "'");
    }

    const auto ev = j.value("evaluation", json::object());
    c.baseline = parse_baseline(ev.value("baseline", std::string("first")));
    c.baseline_file = optional_path(ev, "baseline_file", base_dir);
    c.judge_invalid_retries = ev.value("invalid_retries", c.judge_invalid_retries);
    c.eval_template = optional_path(ev, "prompt_template", base_dir);

    const auto be = j.value("backends", json::object());
    c.generator_backend = resolve_backend(be.value("generator", json::object()), base_dir);
    c.mlm_backend = resolve_backend(be.value("mlm", json::object()), base_dir);
    c.judge_backend = resolve_backend(be.value("judge", json::object()), base_dir);

    const auto bo = j.value("backoff", json::object());
    c.backoff.base = std::chrono::milliseconds(bo.value("base_ms", 1000));
    c.backoff.factor = bo.value("factor", 2.0);
    c.backoff.max_retries = bo.value("max_retries", std::size_t{5});
    c.generation.backoff = c.backoff;

    c.generation.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  auto require = [](const std::optional<fs::path>& p, const char* what) {
    if (p && !fs::exists(*p)) throw Error(ErrorCode::kConfig, std::string(what) + " not found: " + p->string());
  };
  require(dataset, "dataset");
  require(frequencies, "frequency table");
  require(generation_template, "generation template");
  require(eval_template, "evaluation template");
  if (candidate_source == CandidateSource::kFile) {
    if (!candidates_file) throw Error(ErrorCode::kConfig, "generation source 'file' needs candidates_file");
    require(candidates_file, "candidates file");
  }
  if (baseline == BaselineSource::kFile) {
    if (!baseline_file) throw Error(ErrorCode::kConfig, "baseline 'file' needs baseline_file");
    require(baseline_file, "baseline file");
  }
  for (const auto* backend : {&generator_backend, &mlm_backend, &judge_backend}) {
    if (backend->is_object() && backend->contains("script") && (*backend)["script"].is_string()) {
      require(fs::path((*backend)["script"].get<std::string>()), "backend script");
    }
  }
}

namespace {

backends::HttpConfig http_config(const json& j) {
  backends::HttpConfig c;
  c.endpoint = j.at("endpoint").get<std::string>();
  c.timeout = std::chrono::seconds(j.value("timeout_s", 60));
  c.concurrency = j.value("concurrency", std::size_t{8});
  c.token_env = j.value("token_env", std::string());
  return c;
}

json script_of(const json& j) {
  if (j.contains("script") && j["script"].is_string()) return json::parse(read_file(j["script"].get<std::string>()));
  return j;
}

std::shared_ptr<backends::ChatBackend> make_chat(const json& j, std::uint64_t seed, bool judge) {
  if (!j.is_object() || j.empty()) return nullptr;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "http") return std::make_shared<backends::HttpChatBackend>(http_config(j));
  if (kind == "mock-script") return backends::ScriptedChatBackend::from_json(script_of(j));
  if (!judge && kind == "mock-tagged") {
    return backends::make_tagged_generator(j.value("refusal_rate", 0.0), j.value("seed", seed),
                                           j.value("refused_words", std::set<std::string>{}));
  }
  if (judge && kind == "mock-constant") return backends::make_constant_judge(j.value("reply", std::string("Output (a)")));
  throw Error(ErrorCode::kConfig, "unknown " + std::string(judge ? "judge" : "generator") + " backend kind '" + kind + "'");
}

std::shared_ptr<backends::MlmBackend> make_mlm(const json& j) {
  if (!j.is_object() || j.empty()) return nullptr;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "http") {
    backends::MlmModelInfo info;
    info.mask_token_id = j.value("mask_token_id", info.mask_token_id);
    info.vocab_size = j.value("vocab_size", info.vocab_size);
    info.max_length = j.value("max_length", info.max_length);
    return std::make_shared<backends::HttpMlmBackend>(http_config(j), info);
  }
  if (kind == "mock-mlm") {
    const auto script = script_of(j);
    return std::make_shared<backends::ScriptedMlmBackend>(backends::MlmScript::from_json(script),
                                                          script.value("name", std::string("mock-mlm")));
  }
  throw Error(ErrorCode::kConfig, "unknown mlm backend kind '" + kind + "'");
}

}  // namespace

Backends make_backends(const RunConfig& config) {
  try {
    return Backends{make_chat(config.generator_backend, config.seed, false), make_mlm(config.mlm_backend),
                    make_chat(config.judge_backend, config.seed, true)};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("backend description: ") + e.what());
  }
}

std::vector<corpus::WordSense> load_senses(const fs::path& path) {
  std::vector<corpus::WordSense> out;
  for (const auto& j : read_jsonl(path)) out.push_back(corpus::sense_from_json(j));
  return out;
}

std::vector<SelectedSentence> load_selected(const fs::path& stage_dir) {
  std::map<std::string, std::size_t> chosen;
  for (const auto& j : read_jsonl(stage_dir / kScoresFile)) {
    if (j.value("chosen", false)) chosen[j.at("word_sense_id").get<std::string>()] = j.at("candidate_index").get<std::size_t>();
  }
  std::vector<SelectedSentence> out;
  for (const auto& j : read_jsonl(stage_dir / kCandidatesFile)) {
    auto set = genpipe::candidate_set_from_json(j);
    SelectedSentence s{set.word_sense_id, 0, {}};
    if (auto it = chosen.find(set.word_sense_id); it != chosen.end() && it->second < set.candidates.size()) {
      s.candidate_index = it->second;
      s.sentence = set.candidates[it->second];
    }
    out.push_back(std::move(s));
  }
  return out;
}

Runner::Runner(RunConfig config, Backends backends, Sleeper sleep)
    : config_(std::move(config)), backends_(std::move(backends)), sleep_(std::move(sleep)) {}

fs::path Runner::artifact(std::string_view name) const { return config_.stage_dir / fs::path(std::string(name)); }

json Runner::load_manifest() const {
  const auto path = artifact(kManifestFile);
  if (!fs::exists(path)) return json{{"stages", json::object()}};
  return json::parse(read_file(path));
}

void Runner::save_manifest(const json& manifest) const {
  write_file_atomic(artifact(kManifestFile), manifest.dump(2) + "\n");
}

namespace {

std::string backend_id(const std::shared_ptr<backends::ChatBackend>& b) { return b ? b->identifier() : "none"; }
std::string backend_id(const std::shared_ptr<backends::MlmBackend>& b) { return b ? b->identifier() : "none"; }

struct Upstream {
  Stage stage;
  std::string_view file;
};

std::vector<Upstream> upstream_of(Stage stage) {
  switch (stage) {
    case Stage::kPreprocess: return {};
    case Stage::kGenerate: return {{Stage::kPreprocess, kSensesFile}};
    case Stage::kScore: return {{Stage::kPreprocess, kSensesFile}, {Stage::kGenerate, kCandidatesFile}};
    case Stage::kEvaluate:
      return {{Stage::kPreprocess, kSensesFile}, {Stage::kGenerate, kCandidatesFile}, {Stage::kScore, kScoresFile}};
    case Stage::kReport: return {{Stage::kPreprocess, kSensesFile}, {Stage::kEvaluate, kEvaluationsFile}};
  }
  return {};
}

}  // namespace

json Runner::stage_config(Stage stage) const {
  const auto& c = config_;
  switch (stage) {
    case Stage::kPreprocess:
      return json{{"split", corpus::to_string(c.split)}, {"frequencies", c.frequencies.has_value()}};
    case Stage::kGenerate: {
      json j{{"source", to_string(c.candidate_source)}, {"seed", c.seed}};
      if (c.candidate_source == CandidateSource::kLlm) {
        j["num_sentences"] = c.generation.num_sentences;
        j["batching"] = genpipe::to_string(c.generation.batching);
        j["inputs"] = genpipe::to_string(c.generation.inputs);
        j["max_retries"] = c.generation.max_retries;
        j["temperature"] = c.generation.params.temperature;
        j["top_p"] = c.generation.params.top_p;
        j["top_k"] = c.generation.params.top_k;
        j["max_tokens"] = c.generation.params.max_tokens;
        j["template"] = template_digest(c.generation_template);
        j["generator"] = backend_id(backends_.generator);
      }
      return j;
    }
    case Stage::kScore: {
      json j{{"criteria", c.selection == SelectionCriteria::kMlm ? "mlm" : "first"}};
      if (c.selection == SelectionCriteria::kMlm) j["mlm"] = backend_id(backends_.mlm);
      return j;
    }
    case Stage::kEvaluate:
      return json{{"baseline", to_string(c.baseline)},
                  {"seed", c.seed},
                  {"invalid_retries", c.judge_invalid_retries},
                  {"template", template_digest(c.eval_template)},
                  {"judge", backend_id(backends_.judge)}};
    case Stage::kReport: return json{{"tokenizer", backend_id(backends_.mlm)}};
  }
  return json::object();
}

StageOutcome Runner::run_stage(Stage stage) {
  const auto name = std::string(to_string(stage));
  auto manifest = load_manifest();
  auto& stages = manifest["stages"];

  json inputs = json::object();
  for (const auto& up : upstream_of(stage)) {
    const auto up_name = std::string(to_string(up.stage));
    const auto path = artifact(up.file);
    const std::string file(up.file);
    if (!stages.contains(up_name) || !stages[up_name]["outputs"].contains(file) || !fs::exists(path)) {
      throw Error(ErrorCode::kMissingUpstream, name + " needs " + file + " from stage " + up_name);
    }
    const auto digest = sha256_file(path);
    if (digest != stages[up_name]["outputs"][file].get<std::string>()) {
      throw Error(ErrorCode::kStaleUpstream, file + " changed since stage " + up_name + " recorded it");
    }
    inputs[file] = digest;
  }
  auto external = [&](const char* key, const std::optional<fs::path>& p) {
    if (p) inputs[key] = sha256_file(*p);
  };
  if (stage == Stage::kPreprocess) {
    if (!fs::exists(config_.dataset)) throw Error(ErrorCode::kConfig, "dataset not found: " + config_.dataset.string());
    inputs["dataset"] = sha256_file(config_.dataset);
    external("frequencies", config_.frequencies);
  }
  if (stage == Stage::kGenerate && config_.candidate_source == CandidateSource::kFile) {
    external("candidates_file", config_.candidates_file);
  }
  if (stage == Stage::kEvaluate && config_.baseline == BaselineSource::kFile) {
    external("baseline_file", config_.baseline_file);
  }

  const auto cfg = stage_config(stage);
  const auto cfg_digest = sha256_hex(cfg.dump());

  if (stages.contains(name)) {
    const auto& prev = stages[name];
    bool same = prev.value("config_digest", "") == cfg_digest && prev.value("inputs", json()) == inputs;
    if (same) {
      for (const auto& [file, digest] : prev["outputs"].items()) {
        const auto path = artifact(file);
        if (!fs::exists(path) || sha256_file(path) != digest.get<std::string>()) {
          same = false;
          break;
        }
      }
    }
    if (same) {
      spdlog::info("stage {}: up to date", name);
      StageOutcome outcome{stage, true, {}};
      for (const auto& [file, digest] : prev["outputs"].items()) outcome.outputs.push_back(file);
      return outcome;
    }
  }

  fs::create_directories(config_.stage_dir);
  json diagnostics = json::object();
  std::vector<std::string> outputs;
  switch (stage) {
    case Stage::kPreprocess: outputs = do_preprocess(diagnostics); break;
    case Stage::kGenerate: outputs = do_generate(diagnostics); break;
    case Stage::kScore: outputs = do_score(diagnostics); break;
    case Stage::kEvaluate: outputs = do_evaluate(diagnostics); break;
    case Stage::kReport: outputs = do_report(diagnostics); break;
  }

  json out_digests = json::object();
  for (const auto& file : outputs) out_digests[file] = sha256_file(artifact(file));
  stages[name] = json{{"config", cfg},
                      {"config_digest", cfg_digest},
                      {"seed", config_.seed},
                      {"backends",
                       {{"generator", backend_id(backends_.generator)},
                        {"mlm", backend_id(backends_.mlm)},
                        {"judge", backend_id(backends_.judge)}}},
                      {"inputs", inputs},
                      {"outputs", out_digests},
                      {"diagnostics", diagnostics}};
  save_manifest(manifest);
  spdlog::info("stage {}: wrote {}", name, fmt::join(outputs, ", "));
  return StageOutcome{stage, false, outputs};
}

std::vector<StageOutcome> Runner::run_all() {
  std::vector<StageOutcome> out;
  for (auto s : all_stages()) out.push_back(run_stage(s));
  return out;
}

std::vector<std::string> Runner::audit() const {
  std::set<std::string> known{std::string(kManifestFile)};
  const auto manifest = load_manifest();
  for (const auto& [name, entry] : manifest["stages"].items()) {
    for (const auto& [file, digest] : entry["outputs"].items()) known.insert(file);
  }
  std::vector<std::string> orphans;
  if (!fs::exists(config_.stage_dir)) return orphans;
  for (const auto& e : fs::directory_iterator(config_.stage_dir)) {
    if (!e.is_regular_file()) continue;
    const auto file = e.path().filename().string();
    if (!known.contains(file)) orphans.push_back(file);
  }
  std::sort(orphans.begin(), orphans.end());
  return orphans;
}

std::vector<std::string> Runner::do_preprocess(json& diagnostics) {
  std::ifstream in(config_.dataset);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + config_.dataset.string());
  auto parsed = corpus::parse_dataset(in);
  diagnostics["lines"] = parsed.lines_read;
  diagnostics["malformed"] = parsed.malformed.size();
  json examples = json::array();
  for (std::size_t i = 0; i < parsed.malformed.size() && i < 20; ++i) {
    examples.push_back({{"line", parsed.malformed[i].line_number}, {"reason", parsed.malformed[i].reason}});
  }
  diagnostics["malformed_examples"] = examples;
  if (!parsed.malformed.empty()) corpus::check_malformed_ratio(parsed);

  std::vector<corpus::RawEntry> in_split;
  for (auto& e : parsed.entries) {
    if (e.split == config_.split) in_split.push_back(std::move(e));
  }
  auto dedup = corpus::dedup_inflections(in_split);
  diagnostics["dropped_groups"] = dedup.dropped_groups;
  auto senses = std::move(dedup.senses);
  if (config_.frequencies) {
    std::ifstream freq(*config_.frequencies);
    if (!freq) throw Error(ErrorCode::kIo, "cannot read " + config_.frequencies->string());
    senses = corpus::attach_frequencies(std::move(senses), corpus::parse_frequency_table(freq));
  }
  if (!senses.empty()) {
    const auto stats = corpus::split_stats(senses);
    diagnostics["split_stats"] = {{"word_senses", stats.word_senses},
                                  {"unique_words", stats.unique_words},
                                  {"unique_lemmas", stats.unique_lemmas},
                                  {"avg_examples", stats.avg_examples}};
  }
  write_file_atomic(artifact(kSensesFile), corpus::serialize_senses(senses));
  return {std::string(kSensesFile)};
}

std::vector<std::string> Runner::do_generate(json& diagnostics) {
  const auto senses = load_senses(artifact(kSensesFile));
  std::vector<genpipe::CandidateSet> sets;
  switch (config_.candidate_source) {
    case CandidateSource::kLlm: {
      if (!backends_.generator) throw Error(ErrorCode::kConfig, "generate needs a generator backend");
      const auto tmpl = config_.generation_template ? genpipe::PromptTemplate::from_file(config_.generation_template->string())
                                                    : genpipe::PromptTemplate::builtin();
      sets = genpipe::generate_all(senses, config_.generation, *backends_.generator, tmpl, config_.concurrency, sleep_);
      break;
    }
    case CandidateSource::kOxford:
      for (const auto& s : senses) sets.push_back({s.id, s.examples, 0, 0, 0, false, {}});
      break;
    case CandidateSource::kOxfordRandom:
      for (const auto& s : senses) {
        const auto pick = splitmix64(fnv1a64(s.id, config_.seed)) % s.examples.size();
        sets.push_back({s.id, {s.examples[pick]}, 0, 0, 0, false, {}});
      }
      break;
    case CandidateSource::kFile: {
      std::map<std::string, std::vector<std::string>> external;
      for (const auto& j : read_jsonl(*config_.candidates_file)) {
        const auto id = j.at("word_sense_id").get<std::string>();
        if (j.contains("candidates")) {
          external[id] = j.at("candidates").get<std::vector<std::string>>();
        } else {
          external[id] = {j.at("sentence").get<std::string>()};
        }
      }
      std::size_t missing = 0;
      for (const auto& s : senses) {
        auto it = external.find(s.id);
        if (it == external.end() || it->second.empty()) {
          ++missing;
          sets.push_back({s.id, {std::string()}, 0, 0, 0, true, "missing from candidates file"});
        } else {
          sets.push_back({s.id, it->second, 0, 0, 0, false, {}});
        }
      }
      diagnostics["missing_from_file"] = missing;
      break;
    }
  }

  std::size_t imputed = 0;
  std::size_t attempts = 0;
  std::size_t transport_retries = 0;
  std::vector<json> records;
  for (const auto& set : sets) {
    imputed += set.imputed ? 1 : 0;
    attempts += set.attempts;
    transport_retries += set.transport_retries;
    records.push_back(genpipe::to_json(set));
  }
  diagnostics["imputed"] = imputed;
  diagnostics["attempts"] = attempts;
  diagnostics["transport_retries"] = transport_retries;
  write_file_atomic(artifact(kCandidatesFile), to_jsonl(records));
  return {std::string(kCandidatesFile)};
}

std::vector<std::string> Runner::do_score(json& diagnostics) {
  const auto senses = load_senses(artifact(kSensesFile));
  std::map<std::string, genpipe::CandidateSet> sets;
  for (const auto& j : read_jsonl(artifact(kCandidatesFile))) {
    auto set = genpipe::candidate_set_from_json(j);
    sets.emplace(set.word_sense_id, std::move(set));
  }

  const bool use_mlm = config_.selection == SelectionCriteria::kMlm;
  if (use_mlm && !backends_.mlm) throw Error(ErrorCode::kConfig, "score with criteria 'mlm' needs an mlm backend");
  std::optional<backends::RetryingMlmBackend> mlm;
  if (use_mlm) mlm.emplace(*backends_.mlm, config_.backoff, sleep_);

  std::vector<exemplify::Selection> selections(senses.size());
  parallel_for(senses.size(), use_mlm ? config_.concurrency : 1, [&](std::size_t i) {
    auto it = sets.find(senses[i].id);
    if (it == sets.end()) throw Error(ErrorCode::kMissingUpstream, "no candidates for sense " + senses[i].id);
    selections[i] = use_mlm ? exemplify::select_best(it->second, senses[i], *mlm) : exemplify::select_first(it->second);
  });

  std::vector<json> records;
  std::size_t fallbacks = 0;
  for (const auto& sel : selections) {
    if (!sel.diagnostic.empty()) ++fallbacks;
    for (auto& r : exemplify::score_records(sel)) records.push_back(std::move(r));
  }
  diagnostics["fallbacks"] = fallbacks;
  write_file_atomic(artifact(kScoresFile), to_jsonl(records));
  return {std::string(kScoresFile)};
}

std::vector<std::string> Runner::do_evaluate(json& diagnostics) {
  if (!backends_.judge) throw Error(ErrorCode::kConfig, "evaluate needs a judge backend");
  const auto senses = load_senses(artifact(kSensesFile));
  std::map<std::string, std::string> selected;
  for (auto& s : load_selected(config_.stage_dir)) selected[s.word_sense_id] = std::move(s.sentence);

  std::map<std::string, std::string> external_baselines;
  if (config_.baseline == BaselineSource::kFile) {
    for (const auto& j : read_jsonl(*config_.baseline_file)) {
      external_baselines[j.at("word_sense_id").get<std::string>()] = j.at("sentence").get<std::string>();
    }
  }
  auto baseline_for = [&](const corpus::WordSense& s) -> std::string {
    switch (config_.baseline) {
      case BaselineSource::kFirst: return corpus::select_baseline(s);
      case BaselineSource::kRandom: {
        const auto pick = splitmix64(fnv1a64(s.id, splitmix64(config_.seed ^ 0xBA5E11AEULL))) % s.examples.size();
        return s.examples[pick];
      }
      case BaselineSource::kFile: {
        auto it = external_baselines.find(s.id);
        if (it == external_baselines.end()) throw Error(ErrorCode::kMismatchedInputs, "no baseline for " + s.id);
        return it->second;
      }
    }
    return corpus::select_baseline(s);
  };

  const auto tmpl = config_.eval_template ? oxfordeval::EvalTemplate::from_file(config_.eval_template->string())
                                          : oxfordeval::EvalTemplate::builtin();
  oxfordeval::JudgeOptions options;
  options.invalid_retries = config_.judge_invalid_retries;
  options.backoff = config_.backoff;
  const oxfordeval::PresentationRng rng(config_.seed);

  std::vector<oxfordeval::EvalRecord> records(senses.size());
  parallel_for(senses.size(), config_.concurrency, [&](std::size_t i) {
    const auto& s = senses[i];
    auto it = selected.find(s.id);
    const std::string candidate = it == selected.end() ? std::string() : it->second;
    records[i] = oxfordeval::evaluate_pair(i, s, candidate, baseline_for(s), *backends_.judge, rng, options, tmpl, sleep_);
  });

  std::vector<json> lines;
  std::size_t requests = 0;
  for (const auto& r : records) {
    requests += r.requests;
    lines.push_back(oxfordeval::to_json(r));
  }
  diagnostics["judge_requests"] = requests;
  if (!records.empty()) {
    try {
      diagnostics["summary"] = oxfordeval::to_json(oxfordeval::win_rate(records));
    } catch (const Error& e) {
      diagnostics["summary"] = e.what();
    }
  }
  write_file_atomic(artifact(kEvaluationsFile), to_jsonl(lines));
  return {std::string(kEvaluationsFile)};
}

std::vector<std::string> Runner::do_report(json& diagnostics) {
  const auto senses = load_senses(artifact(kSensesFile));
  std::vector<oxfordeval::EvalRecord> records;
  for (const auto& j : read_jsonl(artifact(kEvaluationsFile))) records.push_back(oxfordeval::eval_record_from_json(j));

  json report{{"split", corpus::to_string(config_.split)}, {"seed", config_.seed}, {"pairs", records.size()}};
  try {
    report["oxfordeval"] = oxfordeval::to_json(oxfordeval::win_rate(records));
  } catch (const Error& e) {
    report["oxfordeval"] = nullptr;
    diagnostics["oxfordeval"] = e.what();
  }

  std::vector<std::string> candidates;
  std::vector<std::string> baselines;
  std::vector<json> per_sentence;
  for (const auto& r : records) {
    candidates.push_back(r.candidate);
    baselines.push_back(r.baseline);
    for (const auto* role : {"candidate", "baseline"}) {
      const auto& text = std::string_view(role) == "candidate" ? r.candidate : r.baseline;
      if (metrics::word_count(text) == 0) continue;
      const auto m = metrics::sentence_metrics(text);
      per_sentence.push_back({{"word_sense_id", r.word_sense_id},
                              {"role", role},
                              {"words", m.word_count},
                              {"syllables", m.syllable_count},
                              {"fkgl", m.fkgl}});
    }
  }
  auto cohort = [&](const std::vector<std::string>& xs, const char* key) {
    try {
      report[key] = metrics::to_json(metrics::summarize(xs));
    } catch (const Error& e) {
      report[key] = nullptr;
      diagnostics[key] = e.what();
    }
  };
  cohort(candidates, "candidates");
  cohort(baselines, "baselines");

  json subgroups = json::object();
  std::optional<backends::RetryingMlmBackend> tokenizer;
  if (backends_.mlm) tokenizer.emplace(*backends_.mlm, config_.backoff, sleep_);
  for (const auto& [name, rep] : metrics::subgroup_split(senses, records, tokenizer ? &*tokenizer : nullptr)) {
    subgroups[name] = metrics::to_json(rep);
  }
  report["subgroups"] = subgroups;

  write_file_atomic(artifact(kReportFile), report.dump(2) + "\n");
  write_file_atomic(artifact(kSentenceMetricsFile), to_jsonl(per_sentence));
  return {std::string(kReportFile), std::string(kSentenceMetricsFile)};
}

}  // namespace dictex::pipeline
