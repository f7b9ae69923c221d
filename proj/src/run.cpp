#include "esr/run.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "esr/error.hpp"
#include "esr/io.hpp"
#include "esr/json_io.hpp"

namespace esr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using json_detail::read_key;
using json_detail::require_keys;

// ---------------------------------------------------------------- config

nlohmann::ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["schema_version"] = c.schema_version;
  j["view"] = std::string(to_string(c.view));
  j["data"] = {{"manifest", c.manifest}, {"masks", c.masks}, {"generator", to_json(c.generator)}};
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["evaluation"] = {{"test_fraction", c.evaluation.test_fraction},
                     {"n_repeats", c.evaluation.n_repeats},
                     {"init_seeds", c.evaluation.init_seeds},
                     {"seed", c.evaluation.seed}};
  j["explain"] = {{"hot_level", c.explain.hot_level},
                  {"tip_fraction", c.explain.tip_fraction},
                  {"stone_fraction", c.explain.stone_fraction}};
  j["output"] = {{"root", c.output_root}};
  return j;
}

void validate(const RunConfig& c) {
  if (c.schema_version != kRunConfigSchemaVersion) {
    throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version));
  }
  validate(c.generator);
  validate(c.model);
  validate(c.train);
  validate(c.evaluation);
  validate(c.explain);
}

RunConfig run_config_from_json(const json& j) {
  require_keys(j, {"schema_version", "view", "data", "model", "train", "evaluation", "explain", "output"}, "config");
  RunConfig c;
  read_key(j, "schema_version", c.schema_version, "config");
  if (c.schema_version != kRunConfigSchemaVersion) {
    throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version));
  }
  std::string view(to_string(c.view));
  read_key(j, "view", view, "config");
  c.view = parse_view(view);
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, {"manifest", "masks", "generator"}, "data");
    read_key(d, "manifest", c.manifest, "data");
    read_key(d, "masks", c.masks, "data");
    if (d.contains("generator")) {
      c.generator = generator_spec_from_json(d.at("generator"));
    }
  }
  if (j.contains("model")) {
    c.model = model_config_from_json(j.at("model"));
  }
  if (j.contains("train")) {
    c.train = train_config_from_json(j.at("train"));
  }
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    require_keys(e, {"test_fraction", "n_repeats", "init_seeds", "seed"}, "evaluation");
    read_key(e, "test_fraction", c.evaluation.test_fraction, "evaluation");
    read_key(e, "n_repeats", c.evaluation.n_repeats, "evaluation");
    read_key(e, "init_seeds", c.evaluation.init_seeds, "evaluation");
    read_key(e, "seed", c.evaluation.seed, "evaluation");
  }
  if (j.contains("explain")) {
    const json& e = j.at("explain");
    require_keys(e, {"hot_level", "tip_fraction", "stone_fraction"}, "explain");
    read_key(e, "hot_level", c.explain.hot_level, "explain");
    read_key(e, "tip_fraction", c.explain.tip_fraction, "explain");
    read_key(e, "stone_fraction", c.explain.stone_fraction, "explain");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    require_keys(o, {"root"}, "output");
    read_key(o, "root", c.output_root, "output");
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------- corpus

namespace {

GeneratorSpec only_view(GeneratorSpec spec, View view) {
  for (auto v : kAllViews) {
    if (v != view) {
      for (auto c : kAllClasses) {
        spec.at(v, c) = {};
      }
    }
  }
  return spec;
}

Mask read_mask(const fs::path& path) {
  if (!fs::exists(path)) {
    throw ValidationError("mask files missing: " + path.string());
  }
  Mask m = raster_to_mask(read_png(path));
  if (m.height != kInputSize || m.width != kInputSize) {
    throw ValidationError("mask " + path.string() + " is not 256x256");
  }
  return m;
}

}  // namespace

CorpusView load_corpus(const RunConfig& config, View view, bool need_masks) {
  CorpusView out;
  if (config.manifest.empty()) {
    for (auto& s : generate_corpus(only_view(config.generator, view))) {
      const auto& o = s.observation;
      out.samples.push_back({o.observation_id, o.stone_id, o.label, preprocess_image(o.image)});
      out.masks.emplace(o.observation_id, std::make_pair(std::move(s.stone_mask), std::move(s.tip_mask)));
    }
    return out;
  }
  const fs::path manifest(config.manifest);
  if (!fs::exists(manifest)) {
    throw ValidationError("missing manifest: " + manifest.string());
  }
  out.inputs.push_back(manifest);
  const fs::path base = manifest.parent_path();
  for (auto& o : parse_manifest(manifest)) {
    if (o.view != view) {
      continue;
    }
    out.inputs.push_back(base / o.image_path);
    out.samples.push_back({o.observation_id, o.stone_id, o.label, preprocess_image(o.image)});
  }
  if (!need_masks) {
    return out;
  }
  const fs::path sidecar = config.masks.empty() ? base / "masks.json" : fs::path(config.masks);
  if (!fs::exists(sidecar)) {
    throw ValidationError("mask files missing: " + sidecar.string());
  }
  out.inputs.push_back(sidecar);
  const auto paths = read_mask_sidecar(sidecar);
  const fs::path mask_base = sidecar.parent_path();
  for (const auto& s : out.samples) {
    auto it = paths.find(s.observation_id);
    if (it == paths.end()) {
      throw ValidationError("mask files missing for " + s.observation_id);
    }
    out.masks.emplace(s.observation_id, std::make_pair(read_mask(mask_base / it->second.stone_mask),
                                                       read_mask(mask_base / it->second.tip_mask)));
  }
  return out;
}

// ---------------------------------------------------------------- manifest

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

namespace {

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

fs::path default_run_dir(const RunConfig& config) { return fs::path(config.output_root) / timestamp_now(); }

RunManifest::RunManifest(std::string command, const RunConfig& config)
    : command_(std::move(command)), config_(to_json(config)) {}

void RunManifest::begin_stage(const std::string& name) { stages_.push_back({name, iso_now(), ""}); }

void RunManifest::end_stage() {
  if (!stages_.empty()) {
    stages_.back().finished = iso_now();
  }
}

void RunManifest::add_input(const fs::path& path) { inputs_.emplace_back(path.string(), git_blob_hash_file(path)); }

void RunManifest::add_artifact(const fs::path& run_dir, const fs::path& path) {
  artifacts_.emplace_back(fs::relative(path, run_dir).generic_string(), git_blob_hash_file(path));
}

void RunManifest::write(const fs::path& run_dir) const {
  ordered_json j;
  j["command"] = command_;
  j["config"] = config_;
  ordered_json stages = ordered_json::array();
  for (const auto& s : stages_) {
    stages.push_back({{"name", s.name}, {"started", s.started}, {"finished", s.finished}});
  }
  j["stages"] = stages;
  ordered_json inputs = ordered_json::array();
  for (const auto& [path, hash] : inputs_) {
    inputs.push_back({{"path", path}, {"git_blob_sha1", hash}});
  }
  j["inputs"] = inputs;
  ordered_json artifacts = ordered_json::array();
  for (const auto& [path, hash] : artifacts_) {
    artifacts.push_back({{"path", path}, {"git_blob_sha1", hash}});
  }
  j["artifacts"] = artifacts;
  write_file_atomic(run_dir / "run_manifest.json", j.dump(2) + "\n");
}

namespace {

void write_config(const fs::path& run_dir, const RunConfig& config) {
  fs::create_directories(run_dir);
  write_file_atomic(run_dir / "config.json", to_json(config).dump(2) + "\n");
}

void write_text(RunManifest& manifest, const fs::path& run_dir, const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
  manifest.add_artifact(run_dir, path);
}

std::vector<LabeledImage> pick(const CorpusView& corpus, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    index.emplace(corpus.samples[i].observation_id, i);
  }
  std::vector<LabeledImage> out;
  for (const auto& id : ids) {
    const auto& s = corpus.samples[index.at(id)];
    out.push_back({s.image, s.label});
  }
  return out;
}

std::string view_name(View v) { return std::string(to_string(v)); }

}  // namespace

std::string format_history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,loss,accuracy\n";
  char buf[96];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i + 1, history[i].loss, history[i].accuracy);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------- commands

SynthResult cmd_synth(const RunConfig& config, const fs::path& out_dir, std::optional<View> view,
                      std::ostream& log) {
  validate(config.generator);
  const GeneratorSpec spec = view ? only_view(config.generator, *view) : config.generator;
  RunManifest manifest("synth", config);
  manifest.begin_stage("generate");
  const auto corpus = generate_corpus(spec);
  manifest.end_stage();
  manifest.begin_stage("write");
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + e.what());
  }
  write_corpus(out_dir, corpus);
  write_config(out_dir, config);
  manifest.add_artifact(out_dir, out_dir / "manifest.csv");
  manifest.add_artifact(out_dir, out_dir / "masks.json");
  manifest.end_stage();
  manifest.write(out_dir);

  std::vector<StoneObservation> observations;
  observations.reserve(corpus.size());
  for (const auto& s : corpus) {
    observations.push_back(s.observation);
  }
  SynthResult result{corpus_summary(observations), corpus.size()};
  log << format_summary(result.summary);
  return result;
}

fs::path cmd_train(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  validate(config);
  RunManifest manifest("train", config);
  manifest.begin_stage("load");
  const CorpusView corpus = load_corpus(config, config.view, false);
  for (const auto& p : corpus.inputs) {
    manifest.add_input(p);
  }
  manifest.end_stage();

  Rng split_rng(split_seed_for(config.evaluation, 0));
  const SplitPlan plan = stratified_group_split(split_records(corpus.samples), config.evaluation.test_fraction,
                                                split_rng);
  for (const auto& w : plan.warnings) {
    log << "warning: " << w << "\n";
  }
  const auto train_set = pick(corpus, plan.train);
  log << view_name(config.view) << ": training on " << train_set.size() << " images, " << config.train.epochs
      << " epochs\n";
  manifest.begin_stage("train");
  Rng rng(train_seed_for(config.evaluation, 0, config.model.init_seed));
  const TrainedModel model = train(build_model(config.model), train_set, config.train, rng);
  manifest.end_stage();

  write_config(run_dir, config);
  const fs::path ckpt = run_dir / "checkpoints" / (view_name(config.view) + ".ckpt");
  fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, model);
  manifest.add_artifact(run_dir, ckpt);
  write_text(manifest, run_dir, run_dir / "reports" / (view_name(config.view) + "_history.csv"),
             format_history_csv(model.history));
  manifest.write(run_dir);
  if (!model.history.empty()) {
    log << "final epoch: loss " << model.history.back().loss << ", accuracy " << model.history.back().accuracy
        << "\n";
  }
  log << "checkpoint: " << ckpt.string() << "\n";
  return ckpt;
}

EvaluationReport cmd_evaluate(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  validate(config);
  RunManifest manifest("evaluate", config);
  manifest.begin_stage("load");
  const CorpusView corpus = load_corpus(config, config.view, false);
  for (const auto& p : corpus.inputs) {
    manifest.add_input(p);
  }
  manifest.end_stage();
  write_config(run_dir, config);
  fs::create_directories(run_dir / "checkpoints");

  const std::string v = view_name(config.view);
  manifest.begin_stage("cross_validate");
  const auto on_fold = [&](const FoldResult& fold, const TrainedModel& model) {
    const fs::path ckpt =
        run_dir / "checkpoints" /
        (v + "_r" + std::to_string(fold.repeat) + "_s" + std::to_string(fold.init_seed) + ".ckpt");
    save_checkpoint(ckpt, model);
    manifest.add_artifact(run_dir, ckpt);
    const auto acc = fold.matrix.overall_accuracy();
    log << v << " repeat " << fold.repeat << " seed " << fold.init_seed << ": test accuracy "
        << (acc ? std::to_string(*acc) : std::string("n/a")) << "% on " << fold.cases.size() << " images\n";
  };
  const EvaluationReport report =
      cross_validate(corpus.samples, config.view, config.model, config.train, config.evaluation, on_fold);
  manifest.end_stage();

  const fs::path reports = run_dir / "reports";
  write_text(manifest, run_dir, reports / (v + "_table1.csv"), format_table1_csv(report));
  write_text(manifest, run_dir, reports / (v + "_table2.csv"), format_table2_csv(report));
  write_text(manifest, run_dir, reports / (v + "_evaluation.json"), format_report_json(report));
  write_text(manifest, run_dir, reports / (v + "_confusion.csv"), format_confusion_csv(report.mean_matrix));
  const fs::path png = reports / (v + "_confusion.png");
  write_png(png, render_confusion_matrix(report.mean_matrix, v + " (mean over " +
                                                                 std::to_string(report.folds.size()) + " runs)"));
  manifest.add_artifact(run_dir, png);
  manifest.write(run_dir);
  return report;
}

ExplainSubset parse_explain_subset(std::string_view token) {
  if (token == "test") {
    return ExplainSubset::Test;
  }
  if (token == "train") {
    return ExplainSubset::Train;
  }
  if (token == "all") {
    return ExplainSubset::All;
  }
  throw ValidationError("subset must be test, train or all");
}

HotspotRateReport cmd_explain(const RunConfig& config, const fs::path& checkpoint, const fs::path& run_dir,
                              ExplainSubset subset, int repeat, std::ostream& log) {
  validate(config);
  RunManifest manifest("explain", config);
  manifest.begin_stage("load");
  const TrainedModel model = load_checkpoint(checkpoint);
  manifest.add_input(checkpoint);
  const CorpusView corpus = load_corpus(config, config.view, true);
  for (const auto& p : corpus.inputs) {
    manifest.add_input(p);
  }
  manifest.end_stage();

  std::vector<std::string> ids;
  if (subset == ExplainSubset::All) {
    for (const auto& s : corpus.samples) {
      ids.push_back(s.observation_id);
    }
  } else if (!corpus.samples.empty()) {
    Rng split_rng(split_seed_for(config.evaluation, repeat));
    const SplitPlan plan =
        stratified_group_split(split_records(corpus.samples), config.evaluation.test_fraction, split_rng);
    ids = subset == ExplainSubset::Test ? plan.test : plan.train;
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    index.emplace(corpus.samples[i].observation_id, i);
  }

  write_config(run_dir, config);
  const fs::path overlays = run_dir / "overlays";
  fs::create_directories(overlays);
  manifest.begin_stage("grad_cam");
  std::string per_image = "observation_id,truth,predicted,correct,category,peak_row,peak_col\n";
  std::vector<HotspotCase> cases;
  std::size_t zero_maps = 0;
  for (const auto& id : ids) {
    const EvalSample& s = corpus.samples[index.at(id)];
    const Prediction p = predict(model, s.image);
    const bool correct = p.argmax_class == s.label;
    const HeatMap map = grad_cam(model, s.image, p.argmax_class);
    const fs::path png = overlays / (id + ".png");
    write_png(png, overlay(s.image, map));
    manifest.add_artifact(run_dir, png);
    const auto& [stone, tip] = corpus.masks.at(id);
    std::string category = "none";
    try {
      const HotspotCategory c = localize_hotspot(map, stone, tip, config.explain);
      cases.push_back({config.view, correct, c});
      category = std::string(to_string(c));
    } catch (const NoHotspotError&) {
      ++zero_maps;
    }
    per_image += id + "," + std::string(to_string(s.label)) + "," + std::string(to_string(p.argmax_class)) + "," +
                 (correct ? "true" : "false") + "," + category + "," + std::to_string(map.peak_row) + "," +
                 std::to_string(map.peak_col) + "\n";
  }
  manifest.end_stage();
  const HotspotRateReport report = hotspot_rates(cases);
  const std::string v = view_name(config.view);
  write_text(manifest, run_dir, run_dir / "reports" / (v + "_hotspots.csv"), per_image);
  write_text(manifest, run_dir, run_dir / "reports" / (v + "_hotspot_rates.csv"), format_hotspot_csv(report));
  manifest.write(run_dir);

  const auto& t = report.at(config.view);
  log << v << ": " << ids.size() << " images explained (" << t.correct << " correct, " << t.misclassified
      << " misclassified";
  if (zero_maps > 0) {
    log << ", " << zero_maps << " without a hot spot";
  }
  log << ")\n";
  return report;
}

std::string cmd_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) {
    throw ValidationError("not a run directory: " + run_dir.string());
  }
  const fs::path reports = run_dir / "reports";
  std::ostringstream out;
  out << "run: " << run_dir.string() << "\n";
  std::set<fs::path> files;
  if (fs::is_directory(reports)) {
    for (const auto& e : fs::directory_iterator(reports)) {
      files.insert(e.path());
    }
  }
  char buf[160];
  const auto pct = [&](const ordered_json& a) {
    if (a.at("mean").is_null()) {
      return std::string("n/a");
    }
    std::snprintf(buf, sizeof(buf), "%.1f +/- %.1f", a.at("mean").get<double>(), a.at("std").get<double>());
    return std::string(buf);
  };
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    if (name.ends_with("_evaluation.json")) {
      const ordered_json j = ordered_json::parse(std::ifstream(f));
      out << "\n[" << j.at("view").get<std::string>() << "] cross-validation, " << j.at("folds").size()
          << " runs, overall accuracy " << pct(j.at("overall_accuracy")) << "%\n";
      out << "  pure classes (sensitivity / specificity / PPV / AUROC):\n";
      for (const auto& [cls, m] : j.at("pure").items()) {
        out << "    " << cls << ": " << pct(m.at("sensitivity")) << " / " << pct(m.at("specificity")) << " / "
            << pct(m.at("PPV")) << " / ";
        const auto& au = m.at("AUROC");
        if (au.at("mean").is_null()) {
          out << "n/a\n";
        } else {
          std::snprintf(buf, sizeof(buf), "%.3f", au.at("mean").get<double>());
          out << buf << "\n";
        }
      }
      out << "  mixed classes (sensitivity):\n";
      for (const auto& [cls, modes] : j.at("mixed").items()) {
        for (const auto& [mode, m] : modes.items()) {
          out << "    " << cls << " " << mode << ": " << pct(m.at("sensitivity")) << "\n";
        }
      }
      out << "  confusion-matrix margins consistent: " << (j.at("margins_consistent").get<bool>() ? "yes" : "no")
          << "\n";
    } else if (name.ends_with("_hotspot_rates.csv") || name.ends_with("_history.csv")) {
      std::ifstream in(f);
      std::string line;
      std::size_t rows = 0;
      std::string last;
      while (std::getline(in, line)) {
        if (!line.empty()) {
          ++rows;
          last = line;
        }
      }
      if (name.ends_with("_history.csv")) {
        out << "\n" << name << ": " << (rows > 0 ? rows - 1 : 0) << " epochs";
        if (rows > 1) {
          out << ", last " << last;
        }
        out << "\n";
      } else {
        out << "\n" << name << ":\n";
        std::ifstream again(f);
        while (std::getline(again, line)) {
          out << "  " << line << "\n";
        }
      }
    }
  }
  const std::string text = out.str();
  fs::create_directories(reports);
  write_file_atomic(reports / "summary.txt", text);
  return text;
}

}  // namespace esr
