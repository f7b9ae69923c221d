// esr: synthetic corpus generation, training, cross-validation, Grad-CAM
// explanation and report digest for the endoscopic stone recognizer.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "esr/error.hpp"
#include "esr/run.hpp"

namespace fs = std::filesystem;

namespace {

struct Shared {
  std::string config;
  std::string view;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--config", s.config, "Run configuration (JSON)");
  cmd->add_option("--view", s.view, "surface or section")->check(CLI::IsMember({"surface", "section"}));
  cmd->add_option("--seed", s.seed, "Root seed (generator seed for synth, run seed otherwise)");
  cmd->add_option("--out", s.out, "Output directory");
}

esr::RunConfig resolve(const Shared& s, bool seed_is_generator) {
  esr::RunConfig c = s.config.empty() ? esr::RunConfig{} : esr::load_run_config(s.config);
  if (!s.view.empty()) {
    c.view = esr::parse_view(s.view);
  }
  if (s.seed) {
    (seed_is_generator ? c.generator.seed : c.evaluation.seed) = *s.seed;
  }
  return c;
}

fs::path run_dir(const Shared& s, const esr::RunConfig& c) {
  return s.out.empty() ? esr::default_run_dir(c) : fs::path(s.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Endoscopic stone recognition pipeline"};
  app.require_subcommand(1);

  Shared synth_opts, train_opts, eval_opts, explain_opts;
  std::optional<int> epochs;
  std::string data;
  std::string checkpoint;
  std::string subset = "test";
  int repeat = 0;
  std::string report_run;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic phantom corpus");
  add_shared(synth, synth_opts);

  auto* train = app.add_subcommand("train", "Train one view's network on its train split");
  add_shared(train, train_opts);
  train->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  train->add_option("--data", data, "Corpus manifest CSV (overrides the config)");

  auto* evaluate = app.add_subcommand("evaluate", "Repeated cross-validation with full metrics");
  add_shared(evaluate, eval_opts);
  evaluate->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  evaluate->add_option("--data", data, "Corpus manifest CSV (overrides the config)");

  auto* explain = app.add_subcommand("explain", "Grad-CAM overlays and hot-spot report");
  add_shared(explain, explain_opts);
  explain->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  explain->add_option("--data", data, "Corpus manifest CSV (overrides the config)");
  explain->add_option("--subset", subset, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  explain->add_option("--repeat", repeat, "Split repeat that defines test/train")->check(CLI::NonNegativeNumber);

  auto* report = app.add_subcommand("report", "Summarize a run directory's reports");
  report->add_option("run", report_run, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      const esr::RunConfig c = resolve(synth_opts, true);
      std::optional<esr::View> view;
      if (!synth_opts.view.empty()) {
        view = c.view;
      }
      const fs::path out = synth_opts.out.empty() ? esr::default_run_dir(c) / "data" : fs::path(synth_opts.out);
      esr::cmd_synth(c, out, view, std::cout);
      std::cout << "corpus: " << out.string() << "\n";
    } else if (train->parsed()) {
      esr::RunConfig c = resolve(train_opts, false);
      if (epochs) {
        c.train.epochs = *epochs;
      }
      if (!data.empty()) {
        c.manifest = data;
      }
      esr::cmd_train(c, run_dir(train_opts, c), std::cout);
    } else if (evaluate->parsed()) {
      esr::RunConfig c = resolve(eval_opts, false);
      if (epochs) {
        c.train.epochs = *epochs;
      }
      if (!data.empty()) {
        c.manifest = data;
      }
      const fs::path dir = run_dir(eval_opts, c);
      const auto r = esr::cmd_evaluate(c, dir, std::cout);
      if (r.overall_accuracy.mean) {
        std::cout << "mean test accuracy: " << *r.overall_accuracy.mean << "%\n";
      }
      std::cout << "reports: " << (dir / "reports").string() << "\n";
    } else if (explain->parsed()) {
      esr::RunConfig c = resolve(explain_opts, false);
      if (!data.empty()) {
        c.manifest = data;
      }
      const fs::path dir = run_dir(explain_opts, c);
      esr::cmd_explain(c, checkpoint, dir, esr::parse_explain_subset(subset), repeat, std::cout);
      std::cout << "overlays: " << (dir / "overlays").string() << "\n";
    } else if (report->parsed()) {
      std::cout << esr::cmd_report(report_run);
    }
  } catch (const esr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
