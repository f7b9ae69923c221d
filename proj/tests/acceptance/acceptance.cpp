// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "esr/classifier.hpp"
#include "esr/error.hpp"
#include "esr/evaluation.hpp"
#include "esr/explain.hpp"
#include "esr/run.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace esr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool same(const std::optional<double>& a, const std::optional<double>& b, double tol) {
  if (a.has_value() != b.has_value()) {
    return false;
  }
  return !a || std::abs(*a - *b) <= tol;
}

bool near_printed(const std::optional<double>& v, double printed) {
  return v && std::abs(*v - printed) <= fixture::kPrintedRounding;
}

// ---------------------------------------------------------------- 1

Outcome metrics_oracle() {
  const auto start = Clock::now();
  Rng rng(101);
  int compared = 0, mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    BinaryCounts c;
    do {
      c = {double(rng.below(80)), double(rng.below(80)), double(rng.below(80)), double(rng.below(80))};
      if (trial % 3 == 0) {
        // Fractional counts, as read off averaged matrices.
        c = {c.tp / 10.0, c.fp / 10.0, c.tn / 10.0, c.fn / 10.0};
      }
    } while (c.tp + c.fp + c.tn + c.fn == 0.0);
    const MetricSet m = metrics_from_counts(c);
    const oracle::Ratios o = oracle::ratios(c.tp, c.fp, c.tn, c.fn);
    const bool ok = same(m.accuracy, o.accuracy, 1e-9) && same(m.sensitivity, o.sensitivity, 1e-9) &&
                    same(m.specificity, o.specificity, 1e-9) && same(m.ppv, o.ppv, 1e-9) &&
                    same(m.npv, o.npv, 1e-9) && same(m.fpr, o.fpr, 1e-9) && same(m.fnr, o.fnr, 1e-9);
    mismatches += ok ? 0 : 1;
    ++compared;
  }
  const double t = seconds_since(start);
  return {mismatches == 0 && compared == 1000 && t < 5.0,
          std::to_string(compared) + " count sets, " + std::to_string(mismatches) + " mismatches, " +
              fmt("%.3f s", t)};
}

// ---------------------------------------------------------------- 2

Outcome auroc_oracle() {
  const auto start = Clock::now();
  Rng rng(202);
  int sets = 0, mismatches = 0;
  while (sets < 200) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so ties are common.
      scores[i] = sets % 2 == 0 ? double(rng.below(6)) / 5.0 : rng.uniform();
      labels[i] = rng.bernoulli(0.4);
    }
    const bool pos = std::find(labels.begin(), labels.end(), true) != labels.end();
    const bool neg = std::find(labels.begin(), labels.end(), false) != labels.end();
    if (!pos || !neg) {
      continue;
    }
    ++sets;
    if (std::abs(auroc(scores, labels) - oracle::auroc_pairs(scores, labels)) > 1e-9) {
      ++mismatches;
    }
  }
  const double t = seconds_since(start);
  return {mismatches == 0 && t < 10.0,
          std::to_string(sets) + " sets, " + std::to_string(mismatches) + " mismatches, " + fmt("%.3f s", t)};
}

// ---------------------------------------------------------------- 3

// Rebuilds the averaged matrix from cases with tenth-unit weights so the
// counts pass through confusion_matrix rather than being typed in.
ConfusionMatrix through_confusion_matrix(const ConfusionMatrix& averaged) {
  std::vector<ScoredCase> cases;
  for (auto p : kAllClasses) {
    for (auto a : kAllClasses) {
      const int n = static_cast<int>(std::lround(averaged.at(p, a) * 10.0));
      for (int k = 0; k < n; ++k) {
        ScoredCase sc;
        sc.truth = a;
        sc.prediction.argmax_class = p;
        sc.prediction.probabilities[index_of(p)] = 1.0;
        cases.push_back(sc);
      }
    }
  }
  ConfusionMatrix m = confusion_matrix(cases);
  for (auto& row : m.counts) {
    for (auto& v : row) {
      v /= 10.0;
    }
  }
  return m;
}

Outcome confusion_fixture() {
  const ConfusionMatrix a = through_confusion_matrix(fixture::surface_matrix());
  const ConfusionMatrix b = through_confusion_matrix(fixture::section_matrix());
  const bool ok = near_printed(a.sensitivity(ClassLabel::Ia), fixture::kSurfaceIaSensitivity) &&
                  near_printed(a.ppv(ClassLabel::Ia), fixture::kSurfaceIaPpv) &&
                  near_printed(a.overall_accuracy(), fixture::kSurfaceOverall) &&
                  near_printed(b.overall_accuracy(), fixture::kSectionOverall);
  return {ok, "surface Ia sensitivity " + fmt("%.2f", *a.sensitivity(ClassLabel::Ia)) + ", Ia PPV " +
                  fmt("%.2f", *a.ppv(ClassLabel::Ia)) + ", overall " + fmt("%.2f", *a.overall_accuracy()) +
                  "; section overall " + fmt("%.2f", *b.overall_accuracy())};
}

// ---------------------------------------------------------------- 4

Outcome mixed_fixture() {
  const ConfusionMatrix m = fixture::surface_matrix();
  const auto both = metrics_from_counts(binarize_mixed(m, ClassLabel::IaIIb, MixedMode::Both)).sensitivity;
  const auto second = metrics_from_counts(binarize_mixed(m, ClassLabel::IaIIb, MixedMode::AtLeastSecond)).sensitivity;
  // The computed "at least IIb" value is expected to sit outside the printed
  // mean +/- std; asserting that keeps the discrepancy visible.
  const bool discrepancy = second && std::abs(*second - 80.0) < 1e-9 &&
                           std::abs(*second - fixture::kSurfaceAtLeastIIbPrinted) >
                               fixture::kSurfaceAtLeastIIbPrintedStd;
  const bool ok = both && std::abs(*both - fixture::kSurfaceIaIIbBoth) < 1e-9 && discrepancy;
  return {ok, "both " + fmt("%.2f", both.value_or(-1)) + " (printed 65); at least IIb " +
                  fmt("%.2f", second.value_or(-1)) + " computed vs 70 +/- 6 printed"};
}

// ---------------------------------------------------------------- 5

Outcome split_property() {
  const auto start = Clock::now();
  Rng rng(505);
  std::size_t leaks = 0, fraction_bad = 0, lost = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<SplitRecord> corpus;
    const std::size_t stones = 1 + rng.below(50);
    for (std::size_t s = 0; s < stones; ++s) {
      const ClassLabel label = kAllClasses[rng.below(kNumClasses)];
      const std::size_t images = 1 + rng.below(4);
      for (std::size_t i = 0; i < images; ++i) {
        corpus.push_back({"t" + std::to_string(trial) + "_s" + std::to_string(s) + "_i" + std::to_string(i),
                          "t" + std::to_string(trial) + "_s" + std::to_string(s), label});
      }
    }
    Rng split_rng(derive_seed(505, trial));
    const SplitPlan plan = stratified_group_split(corpus, 0.30, split_rng);
    leaks += oracle::leaked_stones(corpus, plan);
    fraction_bad += oracle::fraction_violations(corpus, plan, 0.30).size();
    lost += corpus.size() - plan.train.size() - plan.test.size();
  }
  const double t = seconds_since(start);
  return {leaks == 0 && fraction_bad == 0 && lost == 0 && t < 30.0,
          "1000 corpora: " + std::to_string(leaks) + " leaked stones, " + std::to_string(fraction_bad) +
              " class fraction violations, " + fmt("%.2f s", t)};
}

// ---------------------------------------------------------------- 6

Outcome gradient_check() {
  ModelConfig cfg;
  cfg.init_seed = 3;
  const TrainedModel model = build_model(cfg);
  nn::Network<double> net = build_network<double>(cfg);
  nn::copy_weights(model.net, net);
  Rng rng(606);
  Image img(3, 256, 256);
  for (auto& v : img.data) {
    v = static_cast<float>(rng.uniform());
  }
  const auto x = nn::tensor_cast<double>(to_tensor(img));
  const double step = 1e-3;
  int checked = 0, bad = 0;
  double worst = 0.0;
  for (auto target : kAllClasses) {
    const auto fg = feature_maps_and_grads(net, x, target);
    for (int s = 0; s < 24; ++s) {
      const std::size_t i = rng.below(fg.features.data.size());
      auto plus = fg.features, minus = fg.features;
      plus.data[i] += step;
      minus.data[i] -= step;
      const double fd =
          (class_score_from_features(net, plus, target) - class_score_from_features(net, minus, target)) /
          (2.0 * step);
      const double g = fg.gradients.data[i];
      const double denom = std::max({std::abs(g), std::abs(fd), 1e-12});
      const double rel = std::abs(fd - g) / denom;
      worst = std::max(worst, rel);
      bad += rel < 1e-3 ? 0 : 1;
      ++checked;
    }
  }
  return {checked >= 100 && bad == 0,
          std::to_string(checked) + " entries, worst relative error " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------- 7

nn::Network<double> one_conv_net() {
  std::vector<std::unique_ptr<nn::Layer<double>>> layers;
  layers.push_back(std::make_unique<nn::Conv2d<double>>(1, 2, 3, 1, 1, true));
  layers.push_back(std::make_unique<nn::ReLU<double>>());
  layers.push_back(std::make_unique<nn::GlobalAvgPool<double>>());
  layers.push_back(std::make_unique<nn::Dense<double>>(2, 5));
  nn::Network<double> net(std::move(layers), 2, nn::Shape{1, 1, 4, 4});
  auto& conv = net.layer(0).params();
  conv[0].data = {1, 0, -1, 2, 0, -2, 1, 0, -1, 0.5, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 0.5};
  conv[1].data = {0.1, -0.3};
  auto& head = net.layer(3).params();
  head[0].data = {0.7, -0.4, -1.0, 2.0, 0.0, 0.0, 3.0, 1.0, -2.0, -0.5};
  head[1].data = {0, 0, 0, 0, 0};
  return net;
}

// Conv by loops, relu, then the Grad-CAM sum with gradient head_weight / 16
// (GAP over 4x4 followed by a dense head), relu and max normalization.
std::vector<double> hand_heat_map(const nn::Network<double>& net, const nn::AlignedVector<double>& x,
                                  ClassLabel target) {
  const auto& w = net.layer(0).params()[0].data;
  const auto& b = net.layer(0).params()[1].data;
  const auto& head = net.layer(3).params()[0].data;
  std::vector<double> map(16, 0.0);
  for (int k = 0; k < 2; ++k) {
    const double weight = head[index_of(target) * 2 + k] / 16.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double a = b[k];
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const int r = i + di, c = j + dj;
            if (r >= 0 && r < 4 && c >= 0 && c < 4) {
              a += w[k * 9 + (di + 1) * 3 + (dj + 1)] * x[r * 4 + c];
            }
          }
        }
        map[i * 4 + j] += weight * std::max(0.0, a);
      }
    }
  }
  double mx = 0.0;
  for (auto& v : map) {
    v = std::max(0.0, v);
    mx = std::max(mx, v);
  }
  for (auto& v : map) {
    v = mx > 0.0 ? v / mx : 0.0;
  }
  return map;
}

Outcome grad_cam_oracle() {
  const auto net = one_conv_net();
  nn::Tensor<double> x(nn::Shape{1, 1, 4, 4});
  x.data = {0.0, 0.2, 0.9, 1.0, 0.1, 0.3, 0.8, 0.7, 0.0, 0.5, 0.6, 0.2, 0.4, 0.1, 0.0, 0.3};
  double worst = 0.0;
  bool nonneg = true;
  for (auto target : kAllClasses) {
    const HeatMap m = grad_cam(net, x, target);
    const auto expected = hand_heat_map(net, x.data, target);
    for (int i = 0; i < 16; ++i) {
      worst = std::max(worst, std::abs(m.values[i] - expected[i]));
      nonneg = nonneg && m.values[i] >= 0.0;
    }
  }

  // Random feature/gradient stacks: non-negativity and invariance of the
  // normalized map under positive gradient scaling.
  Rng rng(707);
  double scale_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + int(rng.below(8)), h = 2 + int(rng.below(6)), w = 2 + int(rng.below(6));
    nn::Tensor<double> f(nn::Shape{1, k, h, w}), g(nn::Shape{1, k, h, w});
    for (auto& v : f.data) {
      v = rng.uniform(0.0, 2.0);
    }
    for (auto& v : g.data) {
      v = rng.uniform(-1.0, 1.0);
    }
    const double s = rng.uniform(0.01, 100.0);
    auto gs = g;
    for (auto& v : gs.data) {
      v *= s;
    }
    const HeatMap a = grad_cam_from(f, g, ClassLabel::Ia, 4 * h, 4 * w);
    const HeatMap b = grad_cam_from(f, gs, ClassLabel::Ia, 4 * h, 4 * w);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      nonneg = nonneg && a.values[i] >= 0.0 && b.values[i] >= 0.0;
      scale_worst = std::max(scale_worst, std::abs(a.values[i] - b.values[i]));
    }
  }
  return {worst <= 1e-6 && nonneg && scale_worst <= 1e-9,
          "fixture max error " + fmt("%.3g", worst) + ", scaling max change " + fmt("%.3g", scale_worst) +
              (nonneg ? ", all non-negative" : ", NEGATIVE values")};
}

// ---------------------------------------------------------------- 8-10

struct EndToEnd {
  EvaluationReport report;
  std::string report_json, table1, table2;
  std::vector<std::vector<std::uint8_t>> checkpoints;
  std::size_t corpus_images = 0;
  std::size_t explained = 0;
  std::size_t in_stone = 0;
  std::size_t no_hotspot = 0;
  std::string hotspot_rows;
  double seconds = 0.0;
};

RunConfig end_to_end_config() {
  RunConfig c;
  c.view = View::Surface;
  c.model.backbone = Backbone::Desk;
  c.model.init_seed = 0;
  c.train.learning_rate = 0.001;
  c.train.batch_size = 8;
  c.train.epochs = 20;
  c.evaluation.n_repeats = 3;
  c.evaluation.init_seeds = {0};
  c.evaluation.seed = 0;
  return c;
}

EndToEnd run_end_to_end(const fs::path& dir) {
  const auto start = Clock::now();
  RunConfig config = end_to_end_config();
  std::ostringstream log;
  cmd_synth(config, dir / "data", config.view, log);
  config.manifest = (dir / "data" / "manifest.csv").string();
  const CorpusView corpus = load_corpus(config, config.view, true);

  std::map<std::string, const Image*> images;
  for (const auto& s : corpus.samples) {
    images[s.observation_id] = &s.image;
  }

  EndToEnd out;
  out.corpus_images = corpus.samples.size();
  const auto on_fold = [&](const FoldResult& fold, const TrainedModel& model) {
    out.checkpoints.push_back(serialize_model(model));
    for (std::size_t i = 0; i < fold.cases.size(); ++i) {
      const ScoredCase& sc = fold.cases[i];
      if (sc.prediction.argmax_class != sc.truth) {
        continue;
      }
      const std::string& id = fold.test_ids[i];
      const HeatMap map = grad_cam(model, *images.at(id), sc.prediction.argmax_class);
      const auto& [stone, tip] = corpus.masks.at(id);
      ++out.explained;
      std::string category = "none";
      if (map.is_zero()) {
        ++out.no_hotspot;
      } else {
        const HotspotCategory c = localize_hotspot(map, stone, tip, config.explain);
        out.in_stone += c == HotspotCategory::InStone ? 1 : 0;
        category = std::string(to_string(c));
      }
      out.hotspot_rows += id + "," + category + "," + std::to_string(map.peak_row) + "," +
                          std::to_string(map.peak_col) + "\n";
    }
  };
  out.report = cross_validate(corpus.samples, config.view, config.model, config.train, config.evaluation, on_fold);
  out.report_json = format_report_json(out.report);
  out.table1 = format_table1_csv(out.report);
  out.table2 = format_table2_csv(out.report);
  out.seconds = seconds_since(start);
  return out;
}

Outcome end_to_end(const EndToEnd& r) {
  bool folds_consistent = !r.report.folds.empty();
  for (const auto& f : r.report.folds) {
    folds_consistent = folds_consistent && f.margins_consistent;
  }
  const double acc = r.report.overall_accuracy.mean.value_or(0.0);
  const bool ok = r.corpus_images == 347 && r.report.folds.size() == 3 && acc >= 90.0 &&
                  r.report.margins_consistent && folds_consistent && r.seconds <= 1800.0;
  return {ok, std::to_string(r.corpus_images) + " images, 3 repeats, overall accuracy " + fmt("%.2f", acc) +
                  " +/- " + fmt("%.2f", r.report.overall_accuracy.std) + "%, margins " +
                  (r.report.margins_consistent && folds_consistent ? "consistent" : "INCONSISTENT") + ", " +
                  fmt("%.0f s", r.seconds)};
}

Outcome hotspots(const EndToEnd& r) {
  const double rate = r.explained ? 100.0 * double(r.in_stone) / double(r.explained) : 0.0;
  return {r.explained > 0 && rate >= 90.0,
          std::to_string(r.in_stone) + " of " + std::to_string(r.explained) +
              " correctly classified test images in_stone (" + fmt("%.1f", rate) + "%), " +
              std::to_string(r.no_hotspot) + " zero maps"};
}

Outcome determinism(const EndToEnd& a, const EndToEnd& b) {
  const bool reports = a.report_json == b.report_json && a.table1 == b.table1 && a.table2 == b.table2;
  const bool ckpts = !a.checkpoints.empty() && a.checkpoints == b.checkpoints;
  const bool maps = a.hotspot_rows == b.hotspot_rows;
  return {reports && ckpts && maps, std::string("reports ") + (reports ? "identical" : "DIFFER") +
                                        ", " + std::to_string(a.checkpoints.size()) + " checkpoints " +
                                        (ckpts ? "identical" : "DIFFER") + ", hot-spot maps " +
                                        (maps ? "identical" : "DIFFER")};
}

int failures = 0;

void report(int number, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  failures += o.pass ? 0 : 1;
  std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", number, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main() {
  report(1, "metrics oracle equivalence", metrics_oracle);
  report(2, "AUROC pair-counting oracle", auroc_oracle);
  report(3, "averaged confusion matrix marginals", confusion_fixture);
  report(4, "mixed-class binarization fixture", mixed_fixture);
  report(5, "split leakage and class fraction", split_property);
  report(6, "feature gradient check", gradient_check);
  report(7, "Grad-CAM hand-computed fixture", grad_cam_oracle);

  test_util::TempDir tmp("acceptance");
  std::optional<EndToEnd> first, second;
  std::string error;
  try {
    first = run_end_to_end(tmp.path() / "first");
  } catch (const std::exception& e) {
    error = e.what();
  }
  report(8, "desk-scale end to end", [&] {
    return first ? end_to_end(*first) : Outcome{false, "exception: " + error};
  });
  report(9, "hot-spot localization", [&] {
    return first ? hotspots(*first) : Outcome{false, "exception: " + error};
  });
  try {
    if (first) {
      second = run_end_to_end(tmp.path() / "second");
    }
  } catch (const std::exception& e) {
    error = e.what();
  }
  report(10, "bit-identical rerun", [&] {
    return first && second ? determinism(*first, *second) : Outcome{false, "exception: " + error};
  });
  return failures == 0 ? 0 : 1;
}
