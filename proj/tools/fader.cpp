// fader: command-line driver for the extraction, retrieval and evaluation
// stages. Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 missing prerequisite or stale artifact.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fader/errors.hpp"
#include "fader/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPrerequisite = 3;

struct Overrides {
  std::string config;
  std::string workdir;
  std::string corpus;
  std::string tasks;
  std::string units_path;
  std::string embeddings;
  std::string profile;
  std::string backend;
  std::string unit;
  std::string scope;
  std::vector<std::size_t> budgets;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_kbs;
  std::optional<int> jobs;
  std::optional<std::size_t> chunk_target;
  bool no_speculation = false;
  bool bleu_smoothing = false;
  bool force = false;
  bool quiet = false;
};

fader::RunConfig resolve_config(const Overrides& o) {
  fader::RunConfig c;
  if (!o.config.empty()) {
    c = fader::load_config(o.config);
  }
  if (!o.workdir.empty()) c.paths.workdir = o.workdir;
  if (!o.corpus.empty()) c.paths.corpus = o.corpus;
  if (!o.tasks.empty()) c.paths.tasks = o.tasks;
  if (!o.units_path.empty()) c.paths.units = o.units_path;
  if (!o.embeddings.empty()) c.paths.embeddings = o.embeddings;
  if (!o.profile.empty()) c.profile = fader::profile_from_string(o.profile);
  if (!o.backend.empty()) c.backend.kind = o.backend;
  if (!o.unit.empty()) {
    try {
      c.unit = fader::unit_kind_from_string(o.unit);
    } catch (const fader::ArgumentError& ex) {
      throw fader::ConfigError(ex.what());
    }
  }
  if (!o.scope.empty()) c.scope = fader::retrieval_scope_from_string(o.scope);
  if (!o.budgets.empty()) c.budgets = o.budgets;
  if (o.seed) c.backend.seed = o.seed;
  if (o.num_kbs) c.num_kbs = *o.num_kbs;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.chunk_target) c.chunk_target = *o.chunk_target;
  if (o.no_speculation) c.speculation = false;
  if (o.bleu_smoothing) c.bleu_smoothing = true;
  c.validate();
  return c;
}

void add_common_options(CLI::App& app, Overrides& o) {
  app.add_option("-c,--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--workdir", o.workdir, "Directory for stage outputs");
  app.add_option("--corpus", o.corpus, "Corpus JSONL {doc_id, text, meta}");
  app.add_option("--tasks", o.tasks, "Task JSONL {task_id, doc_id, question, answers, ...}");
  app.add_option("--units", o.units_path, "External units JSONL for --unit external");
  app.add_option("--embeddings", o.embeddings, "Vector sidecar JSONL for simq");
  app.add_option("--profile", o.profile, "narrativeqa | qasper | quality");
  app.add_option("--backend", o.backend, "mock | http");
  app.add_option("--seed", o.seed, "Backend seed (required for mock)");
  app.add_option("--unit", o.unit, "Retrieval unit: edp | chunk | external");
  app.add_option("--scope", o.scope, "Retrieval scope: document | corpus");
  app.add_option("--budgets", o.budgets, "Context budgets in tokens, strictly increasing")
      ->delimiter(',');
  app.add_option("--num-kbs", o.num_kbs, "Number of sample runs S");
  app.add_option("--jobs", o.jobs, "Worker threads per stage");
  app.add_option("--chunk-target", o.chunk_target, "Chunk size target in tokens");
  app.add_flag("--no-speculation", o.no_speculation, "Fact-only extraction");
  app.add_flag("--bleu-smoothing", o.bleu_smoothing, "Add-one smoothing for BLEU n >= 2");
  app.add_flag("--force", o.force, "Run even when upstream artifacts are stale");
  app.add_flag("-q,--quiet", o.quiet, "Suppress progress lines");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fader: EDP knowledge-base extraction, BM25 retrieval and QA evaluation"};
  app.require_subcommand(1);
  Overrides o;
  std::optional<std::size_t> budget;
  std::string sweep_param;
  std::vector<std::size_t> sweep_values;

  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"ingest", "Split the corpus into sentence-aligned chunks"},
      {"speculate", "Generate speculated questions per chunk and sample run"},
      {"extract", "Extract entity-description pairs per chunk and sample run"},
      {"merge", "Union the per-run knowledge bases"},
      {"index", "Build BM25 indexes over the configured retrieval units"},
      {"retrieve", "Select budgeted contexts for every task"},
      {"answer", "Answer every task from its retrieved context"},
      {"eval", "Score predictions with the profile's metrics"},
      {"curve", "Write context-efficiency curves and Pareto frontiers"},
      {"simq", "Bucket speculated questions by similarity to real questions"},
      {"run", "Run ingest through curve"},
      {"sweep", "Run the pipeline once per value of num_kbs or chunk_target"},
      {"config", "Print the effective configuration"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const Command& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common_options(*sub, o);
    subs[cmd.name] = sub;
  }
  for (const char* name : {"retrieve", "answer", "eval"}) {
    subs[name]->add_option("--budget", budget, "Only this budget from the grid");
  }
  subs["sweep"]->add_option("--param", sweep_param, "num_kbs | chunk_target")->required();
  subs["sweep"]->add_option("--values", sweep_values, "Comma-separated values")
      ->delimiter(',')
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const fader::RunConfig config = resolve_config(o);
    fader::StageOptions options;
    options.force = o.force;
    options.log = o.quiet ? nullptr : &std::cerr;

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "config") {
      std::cout << config.to_json().dump(2) << '\n';
      return 0;
    }
    if (name == "sweep") {
      const fs::path summary = fader::run_sweep(config, sweep_param, sweep_values, options);
      std::cout << summary.string() << '\n';
      return 0;
    }
    fader::Pipeline pipeline(config, options);
    if (name == "ingest") pipeline.ingest();
    if (name == "speculate") pipeline.speculate();
    if (name == "extract") pipeline.extract();
    if (name == "merge") pipeline.merge();
    if (name == "index") pipeline.index();
    if (name == "retrieve") pipeline.retrieve(budget);
    if (name == "answer") pipeline.answer(budget);
    if (name == "eval") pipeline.eval(budget);
    if (name == "curve") pipeline.curve();
    if (name == "simq") pipeline.simq();
    if (name == "run") pipeline.run_all();
    return 0;
  } catch (const fader::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fader::PrerequisiteError& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return kExitPrerequisite;
  } catch (const fader::StaleArtifactError& e) {
    std::cerr << "stale artifact: " << e.what() << '\n';
    return kExitPrerequisite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}
