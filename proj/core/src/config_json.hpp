#pragma once

// JSON mapping of the configuration structs. Private to the core library.

#include <set>
#include <string>

#include "ivpt/error.hpp"
#include "ivpt/prompts.hpp"
#include "ivpt/vit.hpp"
#include "json.hpp"

namespace ivpt::detail {

using json = nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

inline const std::set<std::string>& model_keys() {
  static const std::set<std::string> keys = {"image_height", "image_width", "channels",
                                             "patch_size",   "dim",         "heads",
                                             "layers",       "mlp_ratio",   "num_classes",
                                             "backbone_seed"};
  return keys;
}

inline const std::set<std::string>& prompt_keys() {
  static const std::set<std::string> keys = {"structure", "da", "gamma_init", "num_prompts",
                                             "ar",        "ar_k", "ar_layers"};
  return keys;
}

inline void to_json_fields(json& j, const ModelConfig& m) {
  j["image_height"] = m.image_height;
  j["image_width"] = m.image_width;
  j["channels"] = m.channels;
  j["patch_size"] = m.patch_size;
  j["dim"] = m.dim;
  j["heads"] = m.heads;
  j["layers"] = m.layers;
  j["mlp_ratio"] = m.mlp_ratio;
  j["num_classes"] = m.num_classes;
  j["backbone_seed"] = m.seed;
}

inline void from_json_fields(const json& j, ModelConfig& m) {
  read_key(j, "image_height", m.image_height);
  read_key(j, "image_width", m.image_width);
  read_key(j, "channels", m.channels);
  read_key(j, "patch_size", m.patch_size);
  read_key(j, "dim", m.dim);
  read_key(j, "heads", m.heads);
  read_key(j, "layers", m.layers);
  read_key(j, "mlp_ratio", m.mlp_ratio);
  read_key(j, "num_classes", m.num_classes);
  read_key(j, "backbone_seed", m.seed);
}

inline bool parse_on_off(const json& v, const char* key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "on") return true;
    if (s == "off") return false;
  }
  throw ConfigError(std::string("config key '") + key + "' must be on/off or a boolean");
}

inline void to_json_fields(json& j, const PromptConfig& p) {
  j["structure"] = to_string(p.structure);
  j["da"] = p.da ? "on" : "off";
  j["gamma_init"] = to_string(p.gamma_init);
  j["num_prompts"] = p.num_prompts;
  j["ar"] = to_string(p.ar);
  j["ar_k"] = p.ar_k;
  j["ar_layers"] = p.ar_layers;
}

inline void from_json_fields(const json& j, PromptConfig& p) {
  if (j.contains("structure")) p.structure = parse_structure(j.at("structure").get<std::string>());
  if (j.contains("da")) p.da = parse_on_off(j.at("da"), "da");
  if (j.contains("gamma_init")) p.gamma_init = parse_gamma_init(j.at("gamma_init").get<std::string>());
  read_key(j, "num_prompts", p.num_prompts);
  if (j.contains("ar")) p.ar = parse_ar_mode(j.at("ar").get<std::string>());
  read_key(j, "ar_k", p.ar_k);
  read_key(j, "ar_layers", p.ar_layers);
}

}  // namespace ivpt::detail
