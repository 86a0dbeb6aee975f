#include "kvmn/config.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include "kvmn/error.hpp"

namespace kvmn {

using nlohmann::json;

namespace {

const std::set<std::string> kStructuralKeys = {"mode", "key_mode", "d_f", "d_k", "d_v",
                                               "d_h",  "d_e",      "a",   "vocab", "standard_lstm_output"};

std::size_t as_size(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0 && std::floor(d) == d) return static_cast<std::size_t>(d);
  }
  throw UsageError("config key '" + key + "' must be a non-negative integer");
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw UsageError("config key '" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw UsageError("config key '" + key + "' must be finite");
  return d;
}

bool as_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v.get<long long>() == 0 || v.get<long long>() == 1)) return v.get<long long>() == 1;
  throw UsageError("config key '" + key + "' must be a boolean");
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw UsageError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

bool is_structural_key(const std::string& key) { return kStructuralKeys.count(key) != 0; }

void Config::merge(const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "mode") model.mode = parse_addressing_mode(as_string(v, key));
    else if (key == "key_mode") model.key_mode = parse_key_mode(as_string(v, key));
    else if (key == "d_f") model.frame_dim = as_size(v, key);
    else if (key == "d_k") model.key_dim = as_size(v, key);
    else if (key == "d_v") model.value_dim = as_size(v, key);
    else if (key == "d_h") model.hidden_dim = as_size(v, key);
    else if (key == "d_e") model.embed_dim = as_size(v, key);
    else if (key == "a") model.attention_dim = as_size(v, key);
    else if (key == "vocab") model.vocab_size = as_size(v, key);
    else if (key == "standard_lstm_output") model.standard_lstm_output = as_bool(v, key);
    else if (key == "task") task = parse_task(as_string(v, key));
    else if (key == "T") slots = as_size(v, key);
    else if (key == "batch") batch = as_size(v, key);
    else if (key == "steps") steps = as_size(v, key);
    else if (key == "seed") seed = as_size(v, key);
    else if (key == "rho") rho = as_double(v, key);
    else if (key == "eps") eps = as_double(v, key);
    else if (key == "clip") clip = as_double(v, key);
    else if (key == "beam") beam = as_size(v, key);
    else if (key == "max_len") max_len = as_size(v, key);
    else if (key == "length_normalize") length_normalize = as_bool(v, key);
    else if (key == "bleu_smoothing") bleu_smoothing = as_bool(v, key);
    else if (key == "region_top") region_top = as_size(v, key);
    else if (key == "min_count") min_count = as_size(v, key);
    else if (key == "checkpoint_every") checkpoint_every = as_size(v, key);
    else if (key == "episodes") episodes = as_size(v, key);
    else if (key == "threads") threads = as_size(v, key);
    else throw UsageError("unknown config key '" + key + "'");
  }
}

Config Config::from_json(const json& j) {
  Config c;
  c.merge(j);
  c.validate();
  return c;
}

json Config::to_json() const {
  return json{
      {"mode", std::string(to_string(model.mode))},
      {"key_mode", std::string(to_string(model.key_mode))},
      {"d_f", model.frame_dim},
      {"d_k", model.key_dim},
      {"d_v", model.value_dim},
      {"d_h", model.hidden_dim},
      {"d_e", model.embed_dim},
      {"a", model.attention_dim},
      {"vocab", model.vocab_size},
      {"standard_lstm_output", model.standard_lstm_output},
      {"task", std::string(kvmn::to_string(task))},
      {"T", slots},
      {"batch", batch},
      {"steps", steps},
      {"seed", seed},
      {"rho", rho},
      {"eps", eps},
      {"clip", clip},
      {"beam", beam},
      {"max_len", max_len},
      {"length_normalize", length_normalize},
      {"bleu_smoothing", bleu_smoothing},
      {"region_top", region_top},
      {"min_count", min_count},
      {"checkpoint_every", checkpoint_every},
      {"episodes", episodes},
      {"threads", threads},
  };
}

void Config::validate() const {
  model.validate();
  if (slots == 0) throw UsageError("T must be >= 1");
  if (batch == 0) throw UsageError("batch must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw UsageError("rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw UsageError("eps must be positive");
  if (clip < 0.0) throw UsageError("clip must be >= 0 (0 disables)");
  if (beam == 0) throw UsageError("beam must be >= 1");
  if (max_len == 0) throw UsageError("max_len must be >= 1");
  if (region_top == 0) throw UsageError("region_top must be >= 1");
  if (min_count == 0) throw UsageError("min_count must be >= 1");
  if (threads == 0) throw UsageError("threads must be >= 1");
}

SyntheticSpec Config::synthetic_spec() const {
  return SyntheticSpec{slots, model.vocab_size, model.frame_dim, model.value_dim};
}

bool Config::same_structure(const Config& o) const {
  const auto& a = model;
  const auto& b = o.model;
  return a.mode == b.mode && a.key_mode == b.key_mode && a.frame_dim == b.frame_dim && a.key_dim == b.key_dim &&
         a.value_dim == b.value_dim && a.hidden_dim == b.hidden_dim && a.embed_dim == b.embed_dim &&
         a.attention_dim == b.attention_dim && a.vocab_size == b.vocab_size &&
         a.standard_lstm_output == b.standard_lstm_output;
}

Config resolve_config(const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  json merged = j;
  if (!merged.contains("seed")) {
    if (const char* env = std::getenv("KVMN_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0') throw UsageError("KVMN_SEED must be an unsigned integer");
      merged["seed"] = static_cast<std::uint64_t>(v);
    }
  }
  return Config::from_json(merged);
}

}  // namespace kvmn
