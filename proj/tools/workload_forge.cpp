// workload_forge: mock data, ingest, train, generate and evaluate job tables.

#include <CLI11.hpp>

#include "wforge/pipeline.hpp"

namespace {

struct Flags {
  std::optional<std::string> config, model, out, workdir, trace, catalog, synth;
  std::optional<std::size_t> n, steps;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override it");
  cmd->add_option("--model", f.model, "generator")->check(CLI::IsMember({"smote", "ddpm"}));
  cmd->add_option("--n", f.n, "number of rows to produce");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--steps", f.steps, "diffusion optimizer steps");
  cmd->add_option("--out", f.out, "primary output path");
  cmd->add_option("--workdir", f.workdir, "work directory");
}

wforge::PipelineConfig resolve(const Flags& f) {
  wforge::PipelineConfig cfg;
  if (f.config) cfg.merge_file(*f.config);
  if (f.workdir) cfg.workdir = *f.workdir;
  if (f.model) {
    cfg.model = *f.model;
    cfg.model_set = true;
  }
  if (f.n) cfg.n = *f.n;
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.train.steps = *f.steps;
  if (f.out) cfg.out = *f.out;
  if (f.trace) cfg.trace = *f.trace;
  if (f.catalog) cfg.catalog = *f.catalog;
  if (f.synth) cfg.synth = *f.synth;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic job-table generation and evaluation"};
  app.require_subcommand(1);
  Flags flags;

  auto* mock = app.add_subcommand("mock", "write a mock job table (and optionally a raw trace and site catalog)");
  add_common(mock, flags);
  mock->add_option("--trace", flags.trace, "also write a raw trace CSV here");
  mock->add_option("--catalog", flags.catalog, "also write the matching site catalog JSON here");

  auto* ingest = app.add_subcommand("ingest", "filter a raw trace into train.csv, test.csv and funnel.json");
  add_common(ingest, flags);
  ingest->add_option("--trace", flags.trace, "raw trace (.csv or .jsonl)");
  ingest->add_option("--catalog", flags.catalog, "site catalog JSON");

  auto* train = app.add_subcommand("train", "fit encoders and a generator on train.csv");
  add_common(train, flags);

  auto* generate = app.add_subcommand("generate", "sample synth.csv from the trained generator");
  add_common(generate, flags);

  auto* evaluate = app.add_subcommand("evaluate", "score synth.csv against train.csv and test.csv");
  add_common(evaluate, flags);
  evaluate->add_option("--synth", flags.synth, "synthetic table (default: <workdir>/synth.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  wforge::PipelineConfig cfg;
  try {
    cfg = resolve(flags);
  } catch (const wforge::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return wforge::run_command(app.get_subcommands().front()->get_name(), cfg);
}
