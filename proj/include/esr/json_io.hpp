#pragma once

#include <json.hpp>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "esr/augment.hpp"
#include "esr/error.hpp"
#include "esr/classifier.hpp"
#include "esr/synth.hpp"

namespace esr {

// Strict conversions: a missing key keeps its default, an unknown key or a
// wrongly typed value throws ValidationError naming the key.

nlohmann::ordered_json to_json(const AugmentConfig& c);
nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const GeneratorSpec& s);
nlohmann::ordered_json to_json(const std::vector<EpochStats>& history);

AugmentConfig augment_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
std::vector<EpochStats> history_from_json(const nlohmann::json& j);

namespace json_detail {

/// Throws ValidationError if `j` is not an object or has keys outside `allowed`.
void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

/// Reads j[key] into `out` when present; type mismatches throw ValidationError.
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) {
    return;
  }
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string(where) + "." + key + ": wrong type");
  }
}

}  // namespace json_detail

}  // namespace esr
