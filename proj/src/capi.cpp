#include "kvmn/kvmn.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "kvmn/error.hpp"
#include "kvmn/runner.hpp"

using nlohmann::json;

struct kvmn_model {
  kvmn::TrainingState state;
};

namespace {

thread_local std::string g_last_error;

kvmn_status fail(kvmn_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

kvmn_status status_of(kvmn::ErrorKind kind) {
  switch (kind) {
    case kvmn::ErrorKind::Numeric:
      return KVMN_ERR_NUMERIC;
    case kvmn::ErrorKind::Data:
    case kvmn::ErrorKind::Io:
      return KVMN_ERR_DATA;
    default:
      return KVMN_ERR_USAGE;
  }
}

template <class F>
kvmn_status guarded(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const kvmn::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const json::exception& e) {
    return fail(KVMN_ERR_USAGE, std::string("invalid JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(KVMN_ERR_USAGE, "out of memory");
  } catch (const std::exception& e) {
    return fail(KVMN_ERR_USAGE, e.what());
  }
}

json parse_json(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw kvmn::UsageError("configuration must be a JSON object");
  return j;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw kvmn::UsageError(std::string(what) + " must not be NULL");
}

std::vector<kvmn::Episode> dataset_episodes(const kvmn::TrainingState& state, const char* path) {
  const auto records = kvmn::read_dataset(path);
  std::vector<kvmn::Episode> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(kvmn::to_episode(r, state.vocab, state.config.region_top));
  return out;
}

}  // namespace

extern "C" {

const char* kvmn_version(void) { return "1.0.0"; }

const char* kvmn_last_error(void) { return g_last_error.c_str(); }

void kvmn_free_string(char* s) { std::free(s); }

kvmn_status kvmn_model_create(const char* config_json, kvmn_model** out) {
  return guarded([&] {
    require(out, "out");
    auto config = kvmn::resolve_config(parse_json(config_json));
    *out = new kvmn_model{kvmn::state_for_synthetic(config)};
    return KVMN_OK;
  });
}

kvmn_status kvmn_model_create_for_dataset(const char* config_json, const char* data_path, kvmn_model** out) {
  return guarded([&] {
    require(out, "out");
    require(data_path, "data_path");
    auto config = kvmn::resolve_config(parse_json(config_json));
    const auto records = kvmn::read_dataset(data_path);
    *out = new kvmn_model{kvmn::state_for_dataset(config, records)};
    return KVMN_OK;
  });
}

kvmn_status kvmn_model_load(const char* path, const char* overrides_json, kvmn_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    json overrides = overrides_json ? parse_json(overrides_json) : json();
    *out = new kvmn_model{kvmn::load_checkpoint(path, overrides)};
    return KVMN_OK;
  });
}

kvmn_status kvmn_model_save(const kvmn_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    kvmn::save_checkpoint(path, model->state);
    return KVMN_OK;
  });
}

void kvmn_model_destroy(kvmn_model* model) { delete model; }

kvmn_status kvmn_model_config(const kvmn_model* model, char** config_json) {
  return guarded([&] {
    require(model, "model");
    require(config_json, "config_json");
    *config_json = copy_string(model->state.config.to_json().dump());
    return KVMN_OK;
  });
}

kvmn_status kvmn_model_step(const kvmn_model* model, uint64_t* step) {
  return guarded([&] {
    require(model, "model");
    require(step, "step");
    *step = model->state.step;
    return KVMN_OK;
  });
}

kvmn_status kvmn_train(kvmn_model* model, const char* data_path, const char* out_dir, double* final_loss) {
  return guarded([&] {
    require(model, "model");
    kvmn::TrainingData data;
    if (data_path) {
      data.episodes = dataset_episodes(model->state, data_path);
      if (data.episodes.empty()) throw kvmn::DataError(std::string("dataset '") + data_path + "' is empty");
    }
    kvmn::TrainOptions opts;
    if (out_dir) opts.out_dir = out_dir;
    const auto result = kvmn::run_train(model->state, data, opts);
    if (final_loss) *final_loss = result.losses.empty() ? 0.0 : result.losses.back();
    return KVMN_OK;
  });
}

kvmn_status kvmn_evaluate(const kvmn_model* model, const char* data_path, char** report_json) {
  return guarded([&] {
    require(model, "model");
    require(report_json, "report_json");
    const auto& state = model->state;
    std::vector<kvmn::EvalItem> items;
    if (data_path) {
      items = kvmn::eval_items_from_records(kvmn::read_dataset(data_path), state);
    } else {
      items = kvmn::eval_items_from_episodes(
          kvmn::synthetic_episodes(state.config, kvmn::kEvalStream, state.config.episodes), state.vocab);
    }
    *report_json = copy_string(kvmn::run_eval(state, items).to_json().dump());
    return KVMN_OK;
  });
}

kvmn_status kvmn_decode(const kvmn_model* model, const char* data_path, char** jsonl) {
  return guarded([&] {
    require(model, "model");
    require(jsonl, "jsonl");
    const auto& state = model->state;
    const auto episodes = data_path ? dataset_episodes(state, data_path)
                                    : kvmn::synthetic_episodes(state.config, kvmn::kEvalStream, state.config.episodes);
    std::string out;
    for (const auto& d : kvmn::run_decode(state, episodes)) out += d.to_json().dump() + "\n";
    *jsonl = copy_string(out);
    return KVMN_OK;
  });
}

kvmn_status kvmn_gradcheck(const char* config_json, char** report_json, double* max_error) {
  return guarded([&] {
    auto config = kvmn::resolve_config(parse_json(config_json));
    const auto report = kvmn::gradcheck_report(kvmn::run_gradcheck(config));
    if (report_json) *report_json = copy_string(report.dump());
    const double worst = report["max_error"].get<double>();
    if (max_error) *max_error = worst;
    if (!report["pass"].get<bool>()) {
      return fail(KVMN_ERR_NUMERIC, "gradient check failed: max error " + std::to_string(worst));
    }
    return KVMN_OK;
  });
}

kvmn_status kvmn_generate_dataset(const char* config_json, const char* path) {
  return guarded([&] {
    require(path, "path");
    kvmn::generate_dataset(kvmn::resolve_config(parse_json(config_json)), path);
    return KVMN_OK;
  });
}

}  // extern "C"
