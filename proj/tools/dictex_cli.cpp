// Command-line driver for the pipeline stages and the annotation service.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dictex/annotation.hpp"
#include "dictex/error.hpp"
#include "dictex/io.hpp"
#include "dictex/oxfordeval.hpp"
#include "dictex/pipeline.hpp"

namespace fs = std::filesystem;
using dictex::Error;
using dictex::ErrorCode;
using nlohmann::json;

namespace {

struct StageFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stage_dir;
  std::optional<std::string> judge_endpoint;
  std::optional<std::string> baseline;
  std::optional<std::string> baseline_file;
};

void add_stage_flags(CLI::App* cmd, StageFlags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "override the configured seed");
  cmd->add_option("--stage-dir", f.stage_dir, "override the stage directory");
  cmd->add_option("--judge-endpoint", f.judge_endpoint, "use an HTTP judge at this base URL");
  cmd->add_option("--baseline", f.baseline, "baseline source")->check(CLI::IsMember({"first", "random", "file"}));
  cmd->add_option("--baseline-file", f.baseline_file, "baseline sentences for --baseline file");
}

dictex::pipeline::RunConfig load_config(const StageFlags& f) {
  json j = json::parse(dictex::read_file(f.config));
  const auto base = fs::absolute(f.config).parent_path();
  if (f.seed) j["seed"] = *f.seed;
  if (f.stage_dir) j["stage_dir"] = fs::absolute(*f.stage_dir).string();
  if (f.judge_endpoint) j["backends"]["judge"] = json{{"kind", "http"}, {"endpoint", *f.judge_endpoint}};
  if (f.baseline) j["evaluation"]["baseline"] = *f.baseline;
  if (f.baseline_file) j["evaluation"]["baseline_file"] = fs::absolute(*f.baseline_file).string();
  auto config = dictex::pipeline::RunConfig::from_json(j, base);
  config.validate();
  return config;
}

int run_stages(const StageFlags& f, const std::vector<dictex::pipeline::Stage>& stages) {
  auto config = load_config(f);
  auto backends = dictex::pipeline::make_backends(config);
  dictex::pipeline::Runner runner(std::move(config), std::move(backends));
  for (auto s : stages) {
    const auto outcome = runner.run_stage(s);
    std::cout << dictex::pipeline::to_string(s) << ": " << (outcome.skipped ? "up to date" : "done");
    for (const auto& o : outcome.outputs) std::cout << ' ' << o;
    std::cout << '\n';
  }
  return 0;
}

std::vector<dictex::annotation::PairSource> pair_sources(const fs::path& stage_dir) {
  std::vector<dictex::annotation::PairSource> out;
  for (const auto& j : dictex::read_jsonl(stage_dir / dictex::pipeline::kEvaluationsFile)) {
    const auto r = dictex::oxfordeval::eval_record_from_json(j);
    out.push_back({r.word_sense_id, r.candidate, r.baseline});
  }
  return out;
}

dictex::annotation::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dictionary example sentence generation and evaluation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  const std::map<std::string, dictex::pipeline::Stage> stage_commands{
      {"preprocess", dictex::pipeline::Stage::kPreprocess}, {"generate", dictex::pipeline::Stage::kGenerate},
      {"score", dictex::pipeline::Stage::kScore},           {"evaluate", dictex::pipeline::Stage::kEvaluate},
      {"report", dictex::pipeline::Stage::kReport}};
  std::map<std::string, StageFlags> stage_flags;
  for (const auto& [name, stage] : stage_commands) {
    add_stage_flags(app.add_subcommand(name, "run the " + name + " stage"), stage_flags[name]);
  }
  StageFlags run_flags;
  add_stage_flags(app.add_subcommand("run", "run every stage in order"), run_flags);
  StageFlags audit_flags;
  add_stage_flags(app.add_subcommand("audit", "list stage-directory files the manifest does not cover"), audit_flags);

  auto* serve = app.add_subcommand("annotate-serve", "serve a blinded annotation session");
  std::string sessions_dir = "sessions";
  std::optional<std::string> session_id;
  std::optional<std::string> from_stage;
  std::optional<std::size_t> sample;
  std::uint64_t annotate_seed = 0;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> static_dir;
  serve->add_option("--sessions-dir", sessions_dir, "directory holding sessions");
  serve->add_option("--session", session_id, "existing session id");
  serve->add_option("--stage-dir", from_stage, "create a session from this stage directory's evaluations");
  serve->add_option("--sample", sample, "number of pairs to sample when creating");
  serve->add_option("--seed", annotate_seed, "sampling and presentation seed when creating");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static-dir", static_dir, "annotation UI bundle");

  auto* exp = app.add_subcommand("annotate-export", "export consensus human labels");
  std::string export_sessions = "sessions";
  std::string export_session;
  std::string export_out = "human_labels.jsonl";
  std::optional<std::string> judge_stage;
  exp->add_option("--sessions-dir", export_sessions);
  exp->add_option("--session", export_session)->required();
  exp->add_option("--out", export_out, "consensus labels (JSONL)");
  exp->add_option("--stage-dir", judge_stage, "also report judge agreement against this run's evaluations");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::stderr_color_mt("dictex"));

  try {
    for (const auto& [name, stage] : stage_commands) {
      if (app.got_subcommand(name)) return run_stages(stage_flags[name], {stage});
    }
    if (app.got_subcommand("run")) return run_stages(run_flags, dictex::pipeline::all_stages());
    if (app.got_subcommand("audit")) {
      auto config = load_config(audit_flags);
      dictex::pipeline::Runner runner(std::move(config), {});
      const auto orphans = runner.audit();
      for (const auto& o : orphans) std::cout << o << '\n';
      return orphans.empty() ? 0 : 1;
    }
    if (app.got_subcommand("annotate-serve")) {
      std::string id;
      if (session_id) {
        id = *session_id;
      } else {
        if (!from_stage) throw Error(ErrorCode::kConfig, "give --session or --stage-dir");
        const auto senses = dictex::pipeline::load_senses(fs::path(*from_stage) / dictex::pipeline::kSensesFile);
        dictex::annotation::SessionOptions options;
        options.seed = annotate_seed;
        options.sample_size = sample;
        auto session = dictex::annotation::Session::create(senses, pair_sources(*from_stage), options);
        id = session.id();
        if (!fs::exists(fs::path(sessions_dir) / id)) session.save(fs::path(sessions_dir) / id);
      }
      dictex::annotation::Server server(sessions_dir, static_dir ? std::optional<fs::path>(*static_dir) : std::nullopt);
      server.add_session(id);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "session " << id << " on http://" << host << ':' << port << std::endl;
      if (!server.listen(host, port)) throw Error(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
      return 0;
    }
    if (app.got_subcommand("annotate-export")) {
      const auto dir = fs::path(export_sessions) / export_session;
      const auto session = dictex::annotation::Session::load(dir);
      dictex::annotation::LabelStore store(session, dir / "labels.log");
      const auto consensus = dictex::annotation::consensus_filter(session, store.records());
      std::vector<json> lines;
      for (const auto& [pair, label] : consensus.kept) {
        lines.push_back({{"pair_id", pair}, {"label", static_cast<int>(label)}});
      }
      dictex::write_file_atomic(export_out, dictex::to_jsonl(lines));
      json summary{{"fully_annotated", consensus.fully_annotated},
                   {"excluded_incomplete", consensus.excluded_incomplete},
                   {"kept", consensus.kept.size()},
                   {"agreement", consensus.agreement}};
      if (judge_stage) {
        std::vector<dictex::oxfordeval::EvalRecord> records;
        for (const auto& j : dictex::read_jsonl(fs::path(*judge_stage) / dictex::pipeline::kEvaluationsFile)) {
          records.push_back(dictex::oxfordeval::eval_record_from_json(j));
        }
        summary["judge_agreement"] = dictex::oxfordeval::agreement_rate(records, consensus.kept);
      }
      std::cout << summary.dump(2) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 0;
}
