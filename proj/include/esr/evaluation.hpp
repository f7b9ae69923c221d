#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "esr/classifier.hpp"
#include "esr/dataset.hpp"
#include "esr/rng.hpp"
#include "esr/taxonomy.hpp"

namespace esr {

// ---------------------------------------------------------------- splitting

struct SplitRecord {
  std::string observation_id;
  std::string stone_id;
  ClassLabel label = ClassLabel::Ia;
};

struct SplitPlan {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Per class (a stone's class is the label of its first record), stones are
/// visited in a shuffled order and a whole stone joins the test side whenever
/// that brings the class's test image count closer to test_fraction x images.
/// Each class ends within one stone's image count of its target. Ids keep
/// corpus order on both sides.
SplitPlan stratified_group_split(const std::vector<SplitRecord>& corpus, double test_fraction, Rng& rng);

template <typename Observation>
std::vector<SplitRecord> split_records(const std::vector<Observation>& observations) {
  std::vector<SplitRecord> out;
  out.reserve(observations.size());
  for (const auto& o : observations) {
    out.push_back({o.observation_id, o.stone_id, o.label});
  }
  return out;
}

// ---------------------------------------------------------------- metrics

struct BinaryCounts {
  double tp = 0.0;
  double fp = 0.0;
  double tn = 0.0;
  double fn = 0.0;

  bool operator==(const BinaryCounts&) const = default;
};

/// Column order of the report tables.
enum class Metric : std::uint8_t { Accuracy, Auroc, Sensitivity, Specificity, Ppv, Npv, Fpr, Fnr };
inline constexpr std::array<Metric, 8> kAllMetrics = {Metric::Accuracy, Metric::Auroc, Metric::Sensitivity,
                                                      Metric::Specificity, Metric::Ppv, Metric::Npv,
                                                      Metric::Fpr, Metric::Fnr};
std::string_view to_string(Metric m);

/// Percentages except AUROC (in [0, 1]). nullopt marks an undefined value
/// (zero denominator, or AUROC without both label kinds).
struct MetricSet {
  std::optional<double> accuracy;
  std::optional<double> auroc;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> ppv;
  std::optional<double> npv;
  std::optional<double> fpr;
  std::optional<double> fnr;

  std::optional<double> value(Metric m) const;
  bool operator==(const MetricSet&) const = default;
};

/// AUROC left unset. Throws ValidationError when every count is zero or any is
/// negative.
MetricSet metrics_from_counts(const BinaryCounts& c);

struct ScoredCase {
  Prediction prediction;
  ClassLabel truth = ClassLabel::Ia;
};

enum class MixedMode : std::uint8_t { AtLeastFirst, AtLeastSecond, Both };
inline constexpr std::array<MixedMode, 3> kAllMixedModes = {MixedMode::AtLeastFirst, MixedMode::AtLeastSecond,
                                                            MixedMode::Both};
std::string_view to_string(MixedMode m);

/// Exact-class one-vs-rest.
BinaryCounts binarize(std::span<const ScoredCase> cases, ClassLabel positive);

/// Whether predicting `predicted` counts as detecting `mixed` under `mode`:
/// Ia among its components (first), the other component (second), or the
/// exact class (both).
bool mixed_detected(ClassLabel predicted, ClassLabel mixed, MixedMode mode);

/// Positives are cases whose truth is `mixed`; a case is predicted positive
/// when mixed_detected holds for its argmax. Throws ValidationError for a pure
/// class.
BinaryCounts binarize_mixed(std::span<const ScoredCase> cases, ClassLabel mixed, MixedMode mode);

/// Score for mixed-mode AUROC: total probability of the classes that satisfy
/// the mode's predicate.
double mixed_score(const Prediction& p, ClassLabel mixed, MixedMode mode);

/// Rank statistic: P(random positive outscores random negative), ties 1/2.
/// Throws ValidationError without at least one label of each kind.
double auroc(std::span<const double> scores, const std::vector<bool>& labels);
std::optional<double> auroc_if_defined(std::span<const double> scores, const std::vector<bool>& labels);

MetricSet class_metrics(std::span<const ScoredCase> cases, ClassLabel positive);
MetricSet mixed_metrics(std::span<const ScoredCase> cases, ClassLabel mixed, MixedMode mode);

// ---------------------------------------------------------------- confusion matrix

enum class CellRole : std::uint8_t { Correct, Error, Summary };

/// counts[predicted][actual], rows and columns in class order.
struct ConfusionMatrix {
  std::array<std::array<double, kNumClasses>, kNumClasses> counts{};

  double& at(ClassLabel predicted, ClassLabel actual) { return counts[index_of(predicted)][index_of(actual)]; }
  double at(ClassLabel predicted, ClassLabel actual) const { return counts[index_of(predicted)][index_of(actual)]; }
  double total() const;
  double row_total(ClassLabel predicted) const;
  double column_total(ClassLabel actual) const;
  /// Right-hand margin: diagonal over row total, percent.
  std::optional<double> ppv(ClassLabel c) const;
  /// Bottom margin: diagonal over column total, percent.
  std::optional<double> sensitivity(ClassLabel c) const;
  std::optional<double> overall_accuracy() const;

  /// Role of grid cell (row, col) in the 6x6 rendered layout, the last row and
  /// column being the margins.
  static CellRole role(int row, int col);

  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_matrix(std::span<const ScoredCase> cases);

/// One-vs-rest counts read off a (possibly averaged) matrix.
BinaryCounts binarize(const ConfusionMatrix& m, ClassLabel positive);
BinaryCounts binarize_mixed(const ConfusionMatrix& m, ClassLabel mixed, MixedMode mode);

/// Element-wise mean of matrices.
ConfusionMatrix mean_matrix(std::span<const ConfusionMatrix> matrices);

/// True when every class's matrix margins equal the binarize-derived
/// sensitivity and PPV exactly.
bool margins_consistent(const ConfusionMatrix& m, std::span<const ScoredCase> cases);

std::string format_confusion_csv(const ConfusionMatrix& m);

/// Confusion grid: 5x5 cells with count and percent of total, PPV column,
/// sensitivity row and the overall-accuracy corner. Green/red/grey-blue
/// fills follow CellRole.
Raster render_confusion_matrix(const ConfusionMatrix& m, std::string_view title);

// ---------------------------------------------------------------- aggregation

struct Aggregate {
  std::optional<double> mean;
  double std = 0.0;  ///< sample standard deviation; 0 when n < 2
  std::size_t n = 0;
  std::size_t excluded = 0;  ///< undefined values left out
  bool single_sample = false;

  bool operator==(const Aggregate&) const = default;
};

Aggregate aggregate(const std::vector<std::optional<double>>& values);

struct MetricAggregate {
  std::array<Aggregate, kAllMetrics.size()> values{};

  const Aggregate& at(Metric m) const { return values[static_cast<std::size_t>(m)]; }
  Aggregate& at(Metric m) { return values[static_cast<std::size_t>(m)]; }
  bool operator==(const MetricAggregate&) const = default;
};

MetricAggregate aggregate_metrics(const std::vector<MetricSet>& runs);

// ---------------------------------------------------------------- cross-validation

struct EvaluationConfig {
  double test_fraction = 0.30;
  int n_repeats = 10;
  std::vector<std::uint64_t> init_seeds = {0, 1, 2};
  std::uint64_t seed = 0;  ///< root of the split and training streams

  bool operator==(const EvaluationConfig&) const = default;
};

void validate(const EvaluationConfig& c);

/// A preprocessed image with its grouping metadata.
struct EvalSample {
  std::string observation_id;
  std::string stone_id;
  ClassLabel label = ClassLabel::Ia;
  Image image;
};

struct FoldResult {
  int repeat = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t train_seed = 0;
  SplitPlan plan;
  std::vector<std::string> test_ids;  ///< parallel to cases
  std::vector<ScoredCase> cases;
  ConfusionMatrix matrix;
  std::array<MetricSet, 3> pure{};                   ///< kPureClasses order
  std::array<std::array<MetricSet, 3>, 2> mixed{};  ///< [kMixedClasses][kAllMixedModes]
  bool margins_consistent = false;
};

struct EvaluationReport {
  View view = View::Surface;
  EvaluationConfig config;
  std::vector<FoldResult> folds;
  std::array<MetricAggregate, 3> pure{};
  std::array<std::array<MetricAggregate, 3>, 2> mixed{};
  ConfusionMatrix mean_matrix;
  Aggregate overall_accuracy;
  bool margins_consistent = false;
};

std::uint64_t split_seed_for(const EvaluationConfig& c, int repeat);
std::uint64_t train_seed_for(const EvaluationConfig& c, int repeat, std::uint64_t init_seed);

/// Scores a trained model on the test side of a plan.
FoldResult evaluate_fold(const TrainedModel& model, const std::vector<EvalSample>& corpus, const SplitPlan& plan);

using FoldCallback = std::function<void(const FoldResult&, const TrainedModel&)>;

/// For each repeat: one split (seeded by the repeat); for each init seed: a
/// fresh model trained on the train side and scored on the test side. Folds
/// are ordered by (repeat, init seed). `on_fold` sees each fold and its model.
EvaluationReport cross_validate(const std::vector<EvalSample>& corpus, View view, const ModelConfig& model_config,
                                const TrainConfig& train_config, const EvaluationConfig& config,
                                const FoldCallback& on_fold = {});

/// Aggregates folds into the report tables.
EvaluationReport summarize(View view, const EvaluationConfig& config, std::vector<FoldResult> folds);

std::string format_table1_csv(const EvaluationReport& report);
std::string format_table2_csv(const EvaluationReport& report);
std::string format_report_json(const EvaluationReport& report);

}  // namespace esr
