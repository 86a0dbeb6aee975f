// kvmn: train, evaluate and decode key-value memory captioning models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kvmn/kvmn.h"

using nlohmann::json;

namespace {

struct Args {
  std::string config_path;
  std::string data;
  std::string out;
  std::string checkpoint;
};

int report_failure(kvmn_status status) {
  std::cerr << "kvmn: " << kvmn_last_error() << "\n";
  return static_cast<int>(status);
}

// "--key=value" pairs left over by CLI11. Values parse as JSON literals and
// fall back to plain strings, so --mode=t and --d_h=8 both work.
bool collect_overrides(const std::vector<std::string>& extras, json& out) {
  for (const auto& arg : extras) {
    if (arg.rfind("--", 0) != 0 || arg.size() <= 2) {
      std::cerr << "kvmn: unexpected argument '" << arg << "'\n";
      return false;
    }
    const auto eq = arg.find('=');
    std::string key = arg.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    for (auto& ch : key) {
      if (ch == '-') ch = '_';
    }
    if (eq == std::string::npos) {
      out[key] = true;
      continue;
    }
    const std::string raw = arg.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    out[key] = value.is_discarded() ? json(raw) : value;
  }
  return true;
}

bool load_config(const Args& args, const std::vector<std::string>& extras, json& config) {
  config = json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) {
      std::cerr << "kvmn: cannot read config '" << args.config_path << "'\n";
      return false;
    }
    config = json::parse(in, nullptr, false);
    if (config.is_discarded() || !config.is_object()) {
      std::cerr << "kvmn: config '" << args.config_path << "' is not a JSON object\n";
      return false;
    }
  }
  return collect_overrides(extras, config);
}

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct ModelHandle {
  kvmn_model* p = nullptr;
  ~ModelHandle() { kvmn_model_destroy(p); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  kvmn_free_string(s);
  return out;
}

// Resumes from --checkpoint (config keys become overrides) or starts fresh.
kvmn_status open_model(const Args& args, const json& config, ModelHandle& model) {
  const std::string text = config.dump();
  if (!args.checkpoint.empty()) return kvmn_model_load(args.checkpoint.c_str(), text.c_str(), &model.p);
  if (!args.data.empty()) return kvmn_model_create_for_dataset(text.c_str(), args.data.c_str(), &model.p);
  return kvmn_model_create(text.c_str(), &model.p);
}

int cmd_train(const Args& args, const json& config) {
  ModelHandle model;
  if (auto s = open_model(args, config, model); s != KVMN_OK) return report_failure(s);
  const std::string out = args.out.empty() ? "run" : args.out;
  double loss = 0.0;
  if (auto s = kvmn_train(model.p, or_null(args.data), out.c_str(), &loss); s != KVMN_OK) return report_failure(s);
  std::uint64_t step = 0;
  kvmn_model_step(model.p, &step);
  std::cout << json{{"step", step}, {"loss", loss}, {"checkpoint", out + "/final.kvmn"}}.dump() << "\n";
  return 0;
}

int cmd_eval(const Args& args, const json& config) {
  ModelHandle model;
  if (auto s = open_model(args, config, model); s != KVMN_OK) return report_failure(s);
  char* report = nullptr;
  if (auto s = kvmn_evaluate(model.p, or_null(args.data), &report); s != KVMN_OK) return report_failure(s);
  std::cout << take(report) << "\n";
  return 0;
}

int cmd_decode(const Args& args, const json& config) {
  ModelHandle model;
  if (auto s = open_model(args, config, model); s != KVMN_OK) return report_failure(s);
  char* lines = nullptr;
  if (auto s = kvmn_decode(model.p, or_null(args.data), &lines); s != KVMN_OK) return report_failure(s);
  std::cout << take(lines);
  return 0;
}

int cmd_gradcheck(const json& config) {
  char* report = nullptr;
  const auto s = kvmn_gradcheck(config.dump().c_str(), &report, nullptr);
  if (report) std::cout << take(report) << "\n";
  return s == KVMN_OK ? 0 : report_failure(s);
}

int cmd_gen_data(const Args& args, const json& config) {
  if (args.out.empty()) {
    std::cerr << "kvmn: gen-data needs --out <file.jsonl>\n";
    return KVMN_ERR_USAGE;
  }
  if (auto s = kvmn_generate_dataset(config.dump().c_str(), args.out.c_str()); s != KVMN_OK) return report_failure(s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-value memory network for video captioning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kvmn_version());

  Args args;
  auto add_common = [&](CLI::App* sub) {
    sub->allow_extras();
    sub->add_option("--config", args.config_path, "JSON config file with flat keys");
    return sub;
  };
  auto* train = add_common(app.add_subcommand("train", "Train a model (synthetic task unless --data)"));
  train->add_option("--data", args.data, "JSONL dataset");
  train->add_option("--out", args.out, "Output directory for loss.log and checkpoints (default: run)");
  train->add_option("--checkpoint", args.checkpoint, "Resume from this checkpoint");

  auto* eval = add_common(app.add_subcommand("eval", "Beam-decode and score BLEU@4 and token accuracy"));
  eval->add_option("--checkpoint", args.checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--data", args.data, "JSONL dataset (default: held-out synthetic episodes)");

  auto* decode = add_common(app.add_subcommand("decode", "Print beam-search captions as JSON lines"));
  decode->add_option("--checkpoint", args.checkpoint, "Checkpoint to decode with")->required();
  decode->add_option("--data", args.data, "JSONL dataset (default: held-out synthetic episodes)");

  auto* gradcheck = add_common(app.add_subcommand("gradcheck", "Finite-difference check of every model variant"));

  auto* gen = add_common(app.add_subcommand("gen-data", "Write synthetic episodes as a JSONL dataset"));
  gen->add_option("--out", args.out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : KVMN_ERR_USAGE;
  }

  CLI::App* sub = app.get_subcommands().front();
  json config;
  if (!load_config(args, sub->remaining(), config)) return KVMN_ERR_USAGE;

  if (sub == train) return cmd_train(args, config);
  if (sub == eval) return cmd_eval(args, config);
  if (sub == decode) return cmd_decode(args, config);
  if (sub == gradcheck) return cmd_gradcheck(config);
  return cmd_gen_data(args, config);
}
