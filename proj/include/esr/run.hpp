#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "esr/classifier.hpp"
#include "esr/evaluation.hpp"
#include "esr/explain.hpp"
#include "esr/synth.hpp"

namespace esr {

inline constexpr int kRunConfigSchemaVersion = 1;

/// Everything a run needs; stored as config.json in every run directory.
struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  View view = View::Surface;
  /// Corpus manifest CSV (stone_dataset format). Empty: the corpus is
  /// generated in memory from `generator`.
  std::string manifest;
  /// Mask sidecar JSON for explain; defaults to masks.json next to the manifest.
  std::string masks;
  GeneratorSpec generator = GeneratorSpec::paper_default();
  ModelConfig model;
  TrainConfig train;
  EvaluationConfig evaluation;
  HotspotThresholds explain;
  /// Parent of timestamped run directories.
  std::string output_root = "runs";

  bool operator==(const RunConfig&) const = default;
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
/// Parses and validates; every problem is a ValidationError.
RunConfig load_run_config(const std::filesystem::path& path);
void validate(const RunConfig& c);

/// One view's images (preprocessed) plus, when available, their masks.
struct CorpusView {
  std::vector<EvalSample> samples;
  std::map<std::string, std::pair<Mask, Mask>> masks;  ///< id -> (stone, tip)
  std::vector<std::filesystem::path> inputs;           ///< files read
};

CorpusView load_corpus(const RunConfig& config, View view, bool need_masks);

/// Records stages, inputs and artifacts; written atomically at the end.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& config);

  void begin_stage(const std::string& name);
  void end_stage();
  void add_input(const std::filesystem::path& path);
  void add_artifact(const std::filesystem::path& run_dir, const std::filesystem::path& path);
  void write(const std::filesystem::path& run_dir) const;

 private:
  struct Stage {
    std::string name;
    std::string started;
    std::string finished;
  };
  std::string command_;
  nlohmann::ordered_json config_;
  std::vector<Stage> stages_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

/// UTC "YYYYmmdd-HHMMSS".
std::string timestamp_now();
std::filesystem::path default_run_dir(const RunConfig& config);

struct SynthResult {
  CorpusSummary summary;
  std::size_t images = 0;
};

/// Writes the corpus (one view when `view` is set, else both) under out_dir.
SynthResult cmd_synth(const RunConfig& config, const std::filesystem::path& out_dir, std::optional<View> view,
                      std::ostream& log);

/// Trains on the repeat-0 train split of config.view; returns the checkpoint
/// path (run_dir/checkpoints/<view>.ckpt). History goes to
/// run_dir/reports/<view>_history.csv.
std::filesystem::path cmd_train(const RunConfig& config, const std::filesystem::path& run_dir, std::ostream& log);

/// Full cross-validation; reports under run_dir/reports, one checkpoint per
/// fold under run_dir/checkpoints.
EvaluationReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& run_dir, std::ostream& log);

enum class ExplainSubset { Test, Train, All };
ExplainSubset parse_explain_subset(std::string_view token);

/// Overlays for the chosen subset of config.view, per-image hot-spot CSV and
/// the aggregate rate report. Test/Train refer to the split of `repeat`.
HotspotRateReport cmd_explain(const RunConfig& config, const std::filesystem::path& checkpoint,
                              const std::filesystem::path& run_dir, ExplainSubset subset, int repeat,
                              std::ostream& log);

/// Human-readable digest of a run directory's reports (also written to
/// run_dir/reports/summary.txt).
std::string cmd_report(const std::filesystem::path& run_dir);

std::string format_history_csv(const std::vector<EpochStats>& history);

}  // namespace esr
