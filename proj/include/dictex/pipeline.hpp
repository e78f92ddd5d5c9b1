#pragma once

// Resumable stage runner. Each stage writes line-delimited artifacts into a
// stage directory and records config, seed, backend and input digests in
// manifest.json; a stage whose recorded inputs are unchanged is skipped.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"
#include "dictex/corpus.hpp"
#include "dictex/genpipe.hpp"
#include "dictex/retry.hpp"

namespace dictex::pipeline {

enum class Stage { kPreprocess, kGenerate, kScore, kEvaluate, kReport };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();

enum class CandidateSource { kLlm, kOxford, kOxfordRandom, kFile };
enum class SelectionCriteria { kMlm, kFirst };
enum class BaselineSource { kFirst, kRandom, kFile };

inline constexpr std::string_view kSensesFile = "senses.jsonl";
inline constexpr std::string_view kCandidatesFile = "candidates.jsonl";
inline constexpr std::string_view kScoresFile = "scores.jsonl";
inline constexpr std::string_view kEvaluationsFile = "evaluations.jsonl";
inline constexpr std::string_view kReportFile = "report.json";
inline constexpr std::string_view kSentenceMetricsFile = "sentence_metrics.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> frequencies;
  corpus::Split split = corpus::Split::kValidation;
  std::filesystem::path stage_dir;

  CandidateSource candidate_source = CandidateSource::kLlm;
  std::optional<std::filesystem::path> candidates_file;
  genpipe::GenConfig generation;
  std::optional<std::filesystem::path> generation_template;

  SelectionCriteria selection = SelectionCriteria::kMlm;

  BaselineSource baseline = BaselineSource::kFirst;
  std::optional<std::filesystem::path> baseline_file;
  std::size_t judge_invalid_retries = 2;
  std::optional<std::filesystem::path> eval_template;

  // Backend descriptions, kept as JSON so they can be digested verbatim.
  nlohmann::json generator_backend = nlohmann::json::object();
  nlohmann::json mlm_backend = nlohmann::json::object();
  nlohmann::json judge_backend = nlohmann::json::object();

  BackoffPolicy backoff;
  std::size_t concurrency = 8;

  /// Relative paths resolve against `base_dir`. Throws Error(kConfig).
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  /// Throws Error(kConfig) when a referenced input path is missing.
  void validate() const;
};

struct Backends {
  std::shared_ptr<backends::ChatBackend> generator;
  std::shared_ptr<backends::MlmBackend> mlm;
  std::shared_ptr<backends::ChatBackend> judge;
};

/// Builds backends from the config's descriptions. Kinds: "http",
/// "mock-script" (generator/judge), "mock-tagged" (generator),
/// "mock-constant" (judge), "mock-mlm" (mlm). Missing entries stay null.
Backends make_backends(const RunConfig& config);

struct StageOutcome {
  Stage stage = Stage::kPreprocess;
  bool skipped = false;
  std::vector<std::string> outputs;
};

class Runner {
 public:
  Runner(RunConfig config, Backends backends, Sleeper sleep = real_sleeper());

  /// Runs one stage. Throws Error(kMissingUpstream) when an upstream artifact
  /// or manifest entry is absent, Error(kStaleUpstream) when an upstream
  /// artifact no longer matches its recorded digest.
  StageOutcome run_stage(Stage stage);

  std::vector<StageOutcome> run_all();

  /// Files in the stage directory that the manifest does not account for.
  [[nodiscard]] std::vector<std::string> audit() const;

  [[nodiscard]] const RunConfig& config() const { return config_; }

 private:
  nlohmann::json load_manifest() const;
  void save_manifest(const nlohmann::json& manifest) const;
  nlohmann::json stage_config(Stage stage) const;
  std::filesystem::path artifact(std::string_view name) const;

  std::vector<std::string> do_preprocess(nlohmann::json& diagnostics);
  std::vector<std::string> do_generate(nlohmann::json& diagnostics);
  std::vector<std::string> do_score(nlohmann::json& diagnostics);
  std::vector<std::string> do_evaluate(nlohmann::json& diagnostics);
  std::vector<std::string> do_report(nlohmann::json& diagnostics);

  RunConfig config_;
  Backends backends_;
  Sleeper sleep_;
};

std::vector<corpus::WordSense> load_senses(const std::filesystem::path& path);

struct SelectedSentence {
  std::string word_sense_id;
  std::size_t candidate_index = 0;
  std::string sentence;
};

/// Chosen candidate per sense, read from the candidates and scores artifacts.
std::vector<SelectedSentence> load_selected(const std::filesystem::path& stage_dir);

}  // namespace dictex::pipeline
