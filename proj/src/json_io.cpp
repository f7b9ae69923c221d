#include "esr/json_io.hpp"

#include <algorithm>

namespace esr {

using nlohmann::json;
using nlohmann::ordered_json;
using json_detail::read_key;
using json_detail::require_keys;

namespace json_detail {

void require_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) {
    throw ValidationError(std::string(where) + ": expected an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace json_detail

ordered_json to_json(const AugmentConfig& c) {
  return {{"scaling_range", c.scaling_range},
          {"rotation_range", c.rotation_range},
          {"translation_range", c.translation_range},
          {"horizontal_flip", c.horizontal_flip},
          {"vertical_flip", c.vertical_flip}};
}

ordered_json to_json(const ModelConfig& c) {
  return {{"backbone", std::string(to_string(c.backbone))},
          {"num_classes", c.num_classes},
          {"input_size", c.input_size},
          {"init_seed", c.init_seed},
          {"resnet_blocks", c.resnet_blocks}};
}

ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"augment", to_json(c.augment)}};
}

ordered_json to_json(const GeneratorSpec& s) {
  ordered_json counts = ordered_json::object();
  for (auto v : kAllViews) {
    ordered_json per_view = ordered_json::object();
    for (auto c : kAllClasses) {
      per_view[std::string(to_string(c))] = {{"images", s.at(v, c).images}, {"stones", s.at(v, c).stones}};
    }
    counts[std::string(to_string(v))] = per_view;
  }
  return {{"seed", s.seed},
          {"max_images_per_stone", s.max_images_per_stone},
          {"tip_probability", s.tip_probability},
          {"counts", counts}};
}

ordered_json to_json(const std::vector<EpochStats>& history) {
  ordered_json out = ordered_json::array();
  for (const auto& e : history) {
    out.push_back({{"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  return out;
}

AugmentConfig augment_config_from_json(const json& j) {
  constexpr std::string_view where = "augment";
  require_keys(j, {"scaling_range", "rotation_range", "translation_range", "horizontal_flip", "vertical_flip"}, where);
  AugmentConfig c;
  read_key(j, "scaling_range", c.scaling_range, where);
  read_key(j, "rotation_range", c.rotation_range, where);
  read_key(j, "translation_range", c.translation_range, where);
  read_key(j, "horizontal_flip", c.horizontal_flip, where);
  read_key(j, "vertical_flip", c.vertical_flip, where);
  validate(c);
  return c;
}

ModelConfig model_config_from_json(const json& j) {
  constexpr std::string_view where = "model";
  require_keys(j, {"backbone", "num_classes", "input_size", "init_seed", "resnet_blocks"}, where);
  ModelConfig c;
  std::string backbone(to_string(c.backbone));
  read_key(j, "backbone", backbone, where);
  c.backbone = parse_backbone(backbone);
  read_key(j, "num_classes", c.num_classes, where);
  read_key(j, "input_size", c.input_size, where);
  read_key(j, "init_seed", c.init_seed, where);
  read_key(j, "resnet_blocks", c.resnet_blocks, where);
  validate(c);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  constexpr std::string_view where = "train";
  require_keys(j, {"learning_rate", "batch_size", "epochs", "augment"}, where);
  TrainConfig c;
  read_key(j, "learning_rate", c.learning_rate, where);
  read_key(j, "batch_size", c.batch_size, where);
  read_key(j, "epochs", c.epochs, where);
  if (j.contains("augment")) {
    c.augment = augment_config_from_json(j.at("augment"));
  }
  validate(c);
  return c;
}

GeneratorSpec generator_spec_from_json(const json& j) {
  constexpr std::string_view where = "generator";
  require_keys(j, {"seed", "max_images_per_stone", "tip_probability", "counts", "profile"}, where);
  GeneratorSpec s;
  std::string profile = "paper";
  read_key(j, "profile", profile, where);
  if (profile == "paper") {
    s = GeneratorSpec::paper_default();
  } else if (profile != "empty") {
    throw ValidationError("generator.profile: expected 'paper' or 'empty'");
  }
  read_key(j, "seed", s.seed, where);
  read_key(j, "max_images_per_stone", s.max_images_per_stone, where);
  read_key(j, "tip_probability", s.tip_probability, where);
  if (j.contains("counts")) {
    const json& counts = j.at("counts");
    require_keys(counts, {"surface", "section"}, "generator.counts");
    for (const auto& [view_name, per_view] : counts.items()) {
      const View v = parse_view(view_name);
      const std::string w = "generator.counts." + view_name;
      if (!per_view.is_object()) {
        throw ValidationError(w + ": expected an object");
      }
      for (const auto& [class_name, cell] : per_view.items()) {
        const ClassLabel c = parse_class(class_name);
        require_keys(cell, {"images", "stones"}, w + "." + class_name);
        read_key(cell, "images", s.at(v, c).images, w);
        read_key(cell, "stones", s.at(v, c).stones, w);
      }
    }
  }
  validate(s);
  return s;
}

std::vector<EpochStats> history_from_json(const json& j) {
  if (!j.is_array()) {
    throw ValidationError("history: expected an array");
  }
  std::vector<EpochStats> out;
  for (const auto& e : j) {
    require_keys(e, {"loss", "accuracy"}, "history");
    EpochStats s;
    read_key(e, "loss", s.loss, "history");
    read_key(e, "accuracy", s.accuracy, "history");
    out.push_back(s);
  }
  return out;
}

}  // namespace esr
