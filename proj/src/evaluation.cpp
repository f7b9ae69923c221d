#include "esr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "esr/error.hpp"

namespace esr {

// ---------------------------------------------------------------- splitting

SplitPlan stratified_group_split(const std::vector<SplitRecord>& corpus, double test_fraction, Rng& rng) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw ValidationError("test_fraction must lie in [0, 1]");
  }
  struct Stone {
    ClassLabel label;
    std::size_t images = 0;
  };
  std::vector<std::string> stone_order;
  std::unordered_map<std::string, Stone> stones;
  std::unordered_set<std::string> ids;
  for (const auto& r : corpus) {
    if (!ids.insert(r.observation_id).second) {
      throw ValidationError("duplicate observation_id: " + r.observation_id);
    }
    auto [it, fresh] = stones.try_emplace(r.stone_id, Stone{r.label, 0});
    if (fresh) {
      stone_order.push_back(r.stone_id);
    }
    it->second.images += 1;
  }

  SplitPlan plan;
  std::unordered_set<std::string> test_stones;
  for (auto c : kAllClasses) {
    std::vector<std::string> members;
    std::size_t class_images = 0;
    for (const auto& id : stone_order) {
      if (stones.at(id).label == c) {
        members.push_back(id);
        class_images += stones.at(id).images;
      }
    }
    rng.shuffle(members);
    const double target = test_fraction * double(class_images);
    double taken = 0.0;
    for (const auto& id : members) {
      const double n = double(stones.at(id).images);
      if (std::abs(taken + n - target) < std::abs(taken - target)) {
        taken += n;
        test_stones.insert(id);
      }
    }
    if (!members.empty() && target >= 0.5 && (taken == 0.0 || (taken == double(class_images) && test_fraction < 1.0))) {
      plan.warnings.push_back("class " + std::string(to_string(c)) + ": stones too large to approximate the test fraction");
    }
  }
  for (const auto& r : corpus) {
    (test_stones.count(r.stone_id) ? plan.test : plan.train).push_back(r.observation_id);
  }
  return plan;
}

// ---------------------------------------------------------------- metrics

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Accuracy:
      return "accuracy";
    case Metric::Auroc:
      return "AUROC";
    case Metric::Sensitivity:
      return "sensitivity";
    case Metric::Specificity:
      return "specificity";
    case Metric::Ppv:
      return "PPV";
    case Metric::Npv:
      return "NPV";
    case Metric::Fpr:
      return "FPR";
    case Metric::Fnr:
      return "FNR";
  }
  return "?";
}

std::optional<double> MetricSet::value(Metric m) const {
  switch (m) {
    case Metric::Accuracy:
      return accuracy;
    case Metric::Auroc:
      return auroc;
    case Metric::Sensitivity:
      return sensitivity;
    case Metric::Specificity:
      return specificity;
    case Metric::Ppv:
      return ppv;
    case Metric::Npv:
      return npv;
    case Metric::Fpr:
      return fpr;
    case Metric::Fnr:
      return fnr;
  }
  return std::nullopt;
}

namespace {

std::optional<double> percent(double num, double den) {
  if (den > 0.0) {
    return 100.0 * num / den;
  }
  return std::nullopt;
}

std::optional<double> complement(const std::optional<double>& v) {
  if (v) {
    return 100.0 - *v;
  }
  return std::nullopt;
}

}  // namespace

MetricSet metrics_from_counts(const BinaryCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) {
    throw ValidationError("binary counts must be non-negative");
  }
  const double total = c.tp + c.fp + c.tn + c.fn;
  if (total == 0.0) {
    throw ValidationError("all counts zero");
  }
  MetricSet m;
  m.accuracy = percent(c.tp + c.tn, total);
  m.sensitivity = percent(c.tp, c.tp + c.fn);
  m.specificity = percent(c.tn, c.tn + c.fp);
  m.ppv = percent(c.tp, c.tp + c.fp);
  m.npv = percent(c.tn, c.tn + c.fn);
  m.fpr = complement(m.specificity);
  m.fnr = complement(m.sensitivity);
  return m;
}

std::string_view to_string(MixedMode m) {
  switch (m) {
    case MixedMode::AtLeastFirst:
      return "at_least_first";
    case MixedMode::AtLeastSecond:
      return "at_least_second";
    case MixedMode::Both:
      return "both";
  }
  return "?";
}

BinaryCounts binarize(std::span<const ScoredCase> cases, ClassLabel positive) {
  BinaryCounts c;
  for (const auto& k : cases) {
    const bool actual = k.truth == positive;
    const bool predicted = k.prediction.argmax_class == positive;
    (actual ? (predicted ? c.tp : c.fn) : (predicted ? c.fp : c.tn)) += 1.0;
  }
  return c;
}

namespace {

void require_mixed(ClassLabel mixed) {
  if (!is_mixed(mixed)) {
    throw ValidationError("mixed-stone mode applied to pure class " + std::string(to_string(mixed)));
  }
}

Morphology second_component(ClassLabel mixed) {
  return mixed == ClassLabel::IaIIb ? Morphology::IIb : Morphology::IIIb;
}

}  // namespace

bool mixed_detected(ClassLabel predicted, ClassLabel mixed, MixedMode mode) {
  require_mixed(mixed);
  switch (mode) {
    case MixedMode::AtLeastFirst:
      return components_of(predicted).contains(Morphology::Ia);
    case MixedMode::AtLeastSecond:
      return components_of(predicted).contains(second_component(mixed));
    case MixedMode::Both:
      return predicted == mixed;
  }
  return false;
}

BinaryCounts binarize_mixed(std::span<const ScoredCase> cases, ClassLabel mixed, MixedMode mode) {
  require_mixed(mixed);
  BinaryCounts c;
  for (const auto& k : cases) {
    const bool actual = k.truth == mixed;
    const bool predicted = mixed_detected(k.prediction.argmax_class, mixed, mode);
    (actual ? (predicted ? c.tp : c.fn) : (predicted ? c.fp : c.tn)) += 1.0;
  }
  return c;
}

double mixed_score(const Prediction& p, ClassLabel mixed, MixedMode mode) {
  double s = 0.0;
  for (auto c : kAllClasses) {
    if (mixed_detected(c, mixed, mode)) {
      s += p.probability(c);
    }
  }
  return s;
}

double auroc(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auroc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    throw ValidationError("auroc needs at least one positive and one negative label");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks (1-based) of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) {
      ++j;
    }
    const double midrank = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) {
        rank_sum += midrank;
      }
    }
    i = j + 1;
  }
  const double u = rank_sum - 0.5 * double(pos) * double(pos + 1);
  return u / (double(pos) * double(neg));
}

std::optional<double> auroc_if_defined(std::span<const double> scores, const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
    return std::nullopt;
  }
  return auroc(scores, labels);
}

MetricSet class_metrics(std::span<const ScoredCase> cases, ClassLabel positive) {
  MetricSet m = metrics_from_counts(binarize(cases, positive));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& k : cases) {
    scores.push_back(k.prediction.probability(positive));
    labels.push_back(k.truth == positive);
  }
  m.auroc = auroc_if_defined(scores, labels);
  return m;
}

MetricSet mixed_metrics(std::span<const ScoredCase> cases, ClassLabel mixed, MixedMode mode) {
  MetricSet m = metrics_from_counts(binarize_mixed(cases, mixed, mode));
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& k : cases) {
    scores.push_back(mixed_score(k.prediction, mixed, mode));
    labels.push_back(k.truth == mixed);
  }
  m.auroc = auroc_if_defined(scores, labels);
  return m;
}

// ---------------------------------------------------------------- confusion matrix

double ConfusionMatrix::total() const {
  double s = 0.0;
  for (const auto& row : counts) {
    for (double v : row) {
      s += v;
    }
  }
  return s;
}

double ConfusionMatrix::row_total(ClassLabel predicted) const {
  double s = 0.0;
  for (double v : counts[index_of(predicted)]) {
    s += v;
  }
  return s;
}

double ConfusionMatrix::column_total(ClassLabel actual) const {
  double s = 0.0;
  for (const auto& row : counts) {
    s += row[index_of(actual)];
  }
  return s;
}

std::optional<double> ConfusionMatrix::ppv(ClassLabel c) const { return percent(at(c, c), row_total(c)); }

std::optional<double> ConfusionMatrix::sensitivity(ClassLabel c) const { return percent(at(c, c), column_total(c)); }

std::optional<double> ConfusionMatrix::overall_accuracy() const {
  double diag = 0.0;
  for (auto c : kAllClasses) {
    diag += at(c, c);
  }
  return percent(diag, total());
}

CellRole ConfusionMatrix::role(int row, int col) {
  const int last = static_cast<int>(kNumClasses);
  if (row == last || col == last) {
    return CellRole::Summary;
  }
  return row == col ? CellRole::Correct : CellRole::Error;
}

ConfusionMatrix confusion_matrix(std::span<const ScoredCase> cases) {
  ConfusionMatrix m;
  for (const auto& k : cases) {
    m.at(k.prediction.argmax_class, k.truth) += 1.0;
  }
  return m;
}

BinaryCounts binarize(const ConfusionMatrix& m, ClassLabel positive) {
  BinaryCounts c;
  for (auto p : kAllClasses) {
    for (auto a : kAllClasses) {
      const double v = m.at(p, a);
      const bool actual = a == positive;
      const bool predicted = p == positive;
      (actual ? (predicted ? c.tp : c.fn) : (predicted ? c.fp : c.tn)) += v;
    }
  }
  return c;
}

BinaryCounts binarize_mixed(const ConfusionMatrix& m, ClassLabel mixed, MixedMode mode) {
  require_mixed(mixed);
  BinaryCounts c;
  for (auto p : kAllClasses) {
    for (auto a : kAllClasses) {
      const double v = m.at(p, a);
      const bool actual = a == mixed;
      const bool predicted = mixed_detected(p, mixed, mode);
      (actual ? (predicted ? c.tp : c.fn) : (predicted ? c.fp : c.tn)) += v;
    }
  }
  return c;
}

ConfusionMatrix mean_matrix(std::span<const ConfusionMatrix> matrices) {
  ConfusionMatrix out;
  if (matrices.empty()) {
    return out;
  }
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      double s = 0.0;
      for (const auto& m : matrices) {
        s += m.counts[r][c];
      }
      out.counts[r][c] = s / double(matrices.size());
    }
  }
  return out;
}

bool margins_consistent(const ConfusionMatrix& m, std::span<const ScoredCase> cases) {
  if (cases.empty()) {
    return m.total() == 0.0;
  }
  for (auto c : kAllClasses) {
    const MetricSet b = metrics_from_counts(binarize(cases, c));
    if (b.sensitivity != m.sensitivity(c) || b.ppv != m.ppv(c)) {
      return false;
    }
  }
  return true;
}

std::string format_confusion_csv(const ConfusionMatrix& m) {
  std::string out = "predicted\\actual";
  for (auto c : kAllClasses) {
    out += "," + std::string(to_string(c));
  }
  out += ",PPV\n";
  char buf[64];
  const auto fmt = [&](const std::optional<double>& v) {
    if (!v) {
      return std::string();
    }
    std::snprintf(buf, sizeof(buf), "%.1f", *v);
    return std::string(buf);
  };
  for (auto p : kAllClasses) {
    out += std::string(to_string(p));
    for (auto a : kAllClasses) {
      std::snprintf(buf, sizeof(buf), "%.4g", m.at(p, a));
      out += std::string(",") + buf;
    }
    out += "," + fmt(m.ppv(p)) + "\n";
  }
  out += "sensitivity";
  for (auto a : kAllClasses) {
    out += "," + fmt(m.sensitivity(a));
  }
  out += "," + fmt(m.overall_accuracy()) + "\n";
  return out;
}

// ---------------------------------------------------------------- aggregation

Aggregate aggregate(const std::vector<std::optional<double>>& values) {
  Aggregate a;
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v) {
      defined.push_back(*v);
    } else {
      ++a.excluded;
    }
  }
  a.n = defined.size();
  if (defined.empty()) {
    return a;
  }
  double sum = 0.0;
  for (double v : defined) {
    sum += v;
  }
  const double mean = sum / double(defined.size());
  a.mean = mean;
  if (defined.size() == 1) {
    a.single_sample = true;
    return a;
  }
  double sq = 0.0;
  for (double v : defined) {
    sq += (v - mean) * (v - mean);
  }
  a.std = std::sqrt(sq / double(defined.size() - 1));
  return a;
}

MetricAggregate aggregate_metrics(const std::vector<MetricSet>& runs) {
  MetricAggregate out;
  for (auto m : kAllMetrics) {
    std::vector<std::optional<double>> values;
    for (const auto& r : runs) {
      values.push_back(r.value(m));
    }
    out.at(m) = aggregate(values);
  }
  return out;
}

// ---------------------------------------------------------------- cross-validation

void validate(const EvaluationConfig& c) {
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in (0, 1)");
  }
  if (c.n_repeats < 1) {
    throw ValidationError("n_repeats must be >= 1");
  }
  if (c.init_seeds.empty()) {
    throw ValidationError("init_seeds must not be empty");
  }
}

std::uint64_t split_seed_for(const EvaluationConfig& c, int repeat) {
  return derive_seed(c.seed, 0x5711ULL, static_cast<std::uint64_t>(repeat));
}

std::uint64_t train_seed_for(const EvaluationConfig& c, int repeat, std::uint64_t init_seed) {
  return derive_seed(c.seed, 0x7a1ULL, static_cast<std::uint64_t>(repeat), init_seed);
}

FoldResult evaluate_fold(const TrainedModel& model, const std::vector<EvalSample>& corpus, const SplitPlan& plan) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    index.emplace(corpus[i].observation_id, i);
  }
  FoldResult fold;
  fold.plan = plan;
  for (const auto& id : plan.test) {
    const EvalSample& s = corpus.at(index.at(id));
    fold.test_ids.push_back(id);
    fold.cases.push_back({predict(model, s.image), s.label});
  }
  fold.matrix = confusion_matrix(fold.cases);
  if (!fold.cases.empty()) {
    for (std::size_t i = 0; i < kPureClasses.size(); ++i) {
      fold.pure[i] = class_metrics(fold.cases, kPureClasses[i]);
    }
    for (std::size_t i = 0; i < kMixedClasses.size(); ++i) {
      for (std::size_t j = 0; j < kAllMixedModes.size(); ++j) {
        fold.mixed[i][j] = mixed_metrics(fold.cases, kMixedClasses[i], kAllMixedModes[j]);
      }
    }
  }
  fold.margins_consistent = margins_consistent(fold.matrix, fold.cases);
  return fold;
}

EvaluationReport cross_validate(const std::vector<EvalSample>& corpus, View view, const ModelConfig& model_config,
                                const TrainConfig& train_config, const EvaluationConfig& config,
                                const FoldCallback& on_fold) {
  validate(config);
  validate(model_config);
  validate(train_config);
  const auto records = split_records(corpus);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    index.emplace(corpus[i].observation_id, i);
  }
  std::vector<FoldResult> folds;
  for (int r = 0; r < config.n_repeats; ++r) {
    Rng split_rng(split_seed_for(config, r));
    SplitPlan plan = stratified_group_split(records, config.test_fraction, split_rng);
    plan.seed = split_seed_for(config, r);
    if (plan.train.empty() || plan.test.empty()) {
      throw ValidationError("corpus too small to split");
    }
    std::vector<LabeledImage> train_set;
    train_set.reserve(plan.train.size());
    for (const auto& id : plan.train) {
      const EvalSample& s = corpus[index.at(id)];
      train_set.push_back({s.image, s.label});
    }
    for (std::uint64_t init_seed : config.init_seeds) {
      ModelConfig mc = model_config;
      mc.init_seed = init_seed;
      Rng train_rng(train_seed_for(config, r, init_seed));
      const TrainedModel model = train(build_model(mc), train_set, train_config, train_rng);
      FoldResult fold = evaluate_fold(model, corpus, plan);
      fold.repeat = r;
      fold.init_seed = init_seed;
      fold.split_seed = plan.seed;
      fold.train_seed = train_seed_for(config, r, init_seed);
      if (on_fold) {
        on_fold(fold, model);
      }
      folds.push_back(std::move(fold));
    }
  }
  return summarize(view, config, std::move(folds));
}

EvaluationReport summarize(View view, const EvaluationConfig& config, std::vector<FoldResult> folds) {
  EvaluationReport report;
  report.view = view;
  report.config = config;
  report.folds = std::move(folds);
  std::vector<ConfusionMatrix> matrices;
  std::vector<std::optional<double>> overall;
  report.margins_consistent = !report.folds.empty();
  for (const auto& f : report.folds) {
    matrices.push_back(f.matrix);
    overall.push_back(f.matrix.overall_accuracy());
    report.margins_consistent = report.margins_consistent && f.margins_consistent;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<MetricSet> runs;
    for (const auto& f : report.folds) {
      runs.push_back(f.pure[i]);
    }
    report.pure[i] = aggregate_metrics(runs);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<MetricSet> runs;
      for (const auto& f : report.folds) {
        runs.push_back(f.mixed[i][j]);
      }
      report.mixed[i][j] = aggregate_metrics(runs);
    }
  }
  report.mean_matrix = mean_matrix(matrices);
  report.overall_accuracy = aggregate(overall);
  return report;
}

// ---------------------------------------------------------------- serialization

namespace {

std::string fixed(const std::optional<double>& v, int digits = 2) {
  if (!v) {
    return "";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, *v);
  return buf;
}

std::string metric_columns_header() {
  std::string out;
  for (auto m : kAllMetrics) {
    out += "," + std::string(to_string(m)) + "," + std::string(to_string(m)) + "_std";
  }
  return out + ",n_runs,undefined_values,single_sample";
}

std::string metric_columns(const MetricAggregate& a) {
  std::string out;
  std::size_t n = 0, excluded = 0;
  bool single = false;
  for (auto m : kAllMetrics) {
    const Aggregate& g = a.at(m);
    const int digits = m == Metric::Auroc ? 3 : 2;
    out += "," + fixed(g.mean, digits) + "," + (g.mean ? fixed(g.std, digits) : "");
    n = std::max(n, g.n + g.excluded);
    excluded += g.excluded;
    single = single || g.single_sample;
  }
  return out + "," + std::to_string(n) + "," + std::to_string(excluded) + "," + (single ? "true" : "false");
}

std::string mode_label(ClassLabel mixed, MixedMode mode) {
  const std::string second(to_string(second_component(mixed)));
  switch (mode) {
    case MixedMode::AtLeastFirst:
      return "at least Ia";
    case MixedMode::AtLeastSecond:
      return "at least " + second;
    case MixedMode::Both:
      return "both Ia and " + second;
  }
  return "";
}

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json metric_set_json(const MetricSet& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (auto m : kAllMetrics) {
    j[std::string(to_string(m))] = opt_json(s.value(m));
  }
  return j;
}

nlohmann::ordered_json aggregate_json(const MetricAggregate& a) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (auto m : kAllMetrics) {
    const Aggregate& g = a.at(m);
    j[std::string(to_string(m))] = {{"mean", opt_json(g.mean)},
                                    {"std", g.std},
                                    {"n", g.n},
                                    {"excluded", g.excluded},
                                    {"single_sample", g.single_sample}};
  }
  return j;
}

nlohmann::ordered_json matrix_json(const ConfusionMatrix& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : m.counts) {
    rows.push_back(row);
  }
  nlohmann::ordered_json ppv = nlohmann::ordered_json::array();
  nlohmann::ordered_json sens = nlohmann::ordered_json::array();
  for (auto c : kAllClasses) {
    ppv.push_back(opt_json(m.ppv(c)));
    sens.push_back(opt_json(m.sensitivity(c)));
  }
  return {{"layout", "counts[predicted][actual]"},
          {"counts", rows},
          {"ppv", ppv},
          {"sensitivity", sens},
          {"overall_accuracy", opt_json(m.overall_accuracy())}};
}

}  // namespace

std::string format_table1_csv(const EvaluationReport& report) {
  std::string out = "view,class" + metric_columns_header() + "\n";
  for (std::size_t i = 0; i < kPureClasses.size(); ++i) {
    out += std::string(to_string(report.view)) + "," + std::string(to_string(kPureClasses[i])) +
           metric_columns(report.pure[i]) + "\n";
  }
  return out;
}

std::string format_table2_csv(const EvaluationReport& report) {
  std::string out = "view,class,mode,label" + metric_columns_header() + "\n";
  for (std::size_t i = 0; i < kMixedClasses.size(); ++i) {
    for (std::size_t j = 0; j < kAllMixedModes.size(); ++j) {
      out += std::string(to_string(report.view)) + "," + std::string(to_string(kMixedClasses[i])) + "," +
             std::string(to_string(kAllMixedModes[j])) + "," + mode_label(kMixedClasses[i], kAllMixedModes[j]) +
             metric_columns(report.mixed[i][j]) + "\n";
    }
  }
  return out;
}

std::string format_report_json(const EvaluationReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["view"] = std::string(to_string(report.view));
  j["config"] = {{"test_fraction", report.config.test_fraction},
                 {"n_repeats", report.config.n_repeats},
                 {"init_seeds", report.config.init_seeds},
                 {"seed", report.config.seed}};
  ordered_json pure = ordered_json::object();
  for (std::size_t i = 0; i < kPureClasses.size(); ++i) {
    pure[std::string(to_string(kPureClasses[i]))] = aggregate_json(report.pure[i]);
  }
  j["pure"] = pure;
  ordered_json mixed = ordered_json::object();
  for (std::size_t i = 0; i < kMixedClasses.size(); ++i) {
    ordered_json modes = ordered_json::object();
    for (std::size_t k = 0; k < kAllMixedModes.size(); ++k) {
      modes[std::string(to_string(kAllMixedModes[k]))] = aggregate_json(report.mixed[i][k]);
    }
    mixed[std::string(to_string(kMixedClasses[i]))] = modes;
  }
  j["mixed"] = mixed;
  j["overall_accuracy"] = {{"mean", opt_json(report.overall_accuracy.mean)},
                           {"std", report.overall_accuracy.std},
                           {"n", report.overall_accuracy.n},
                           {"single_sample", report.overall_accuracy.single_sample}};
  j["mean_confusion_matrix"] = matrix_json(report.mean_matrix);
  j["margins_consistent"] = report.margins_consistent;
  ordered_json folds = ordered_json::array();
  for (const auto& f : report.folds) {
    ordered_json fold;
    fold["repeat"] = f.repeat;
    fold["init_seed"] = f.init_seed;
    fold["split_seed"] = f.split_seed;
    fold["train_seed"] = f.train_seed;
    fold["n_train"] = f.plan.train.size();
    fold["n_test"] = f.plan.test.size();
    fold["warnings"] = f.plan.warnings;
    fold["confusion_matrix"] = matrix_json(f.matrix);
    ordered_json fp = ordered_json::object();
    for (std::size_t i = 0; i < kPureClasses.size(); ++i) {
      fp[std::string(to_string(kPureClasses[i]))] = metric_set_json(f.pure[i]);
    }
    fold["pure"] = fp;
    ordered_json fm = ordered_json::object();
    for (std::size_t i = 0; i < kMixedClasses.size(); ++i) {
      ordered_json modes = ordered_json::object();
      for (std::size_t k = 0; k < kAllMixedModes.size(); ++k) {
        modes[std::string(to_string(kAllMixedModes[k]))] = metric_set_json(f.mixed[i][k]);
      }
      fm[std::string(to_string(kMixedClasses[i]))] = modes;
    }
    fold["mixed"] = fm;
    ordered_json preds = ordered_json::array();
    for (std::size_t i = 0; i < f.cases.size(); ++i) {
      preds.push_back({{"observation_id", f.test_ids[i]},
                       {"truth", std::string(to_string(f.cases[i].truth))},
                       {"predicted", std::string(to_string(f.cases[i].prediction.argmax_class))},
                       {"probabilities", f.cases[i].prediction.probabilities}});
    }
    fold["predictions"] = preds;
    folds.push_back(fold);
  }
  j["folds"] = folds;
  return j.dump(2) + "\n";
}

}  // namespace esr
