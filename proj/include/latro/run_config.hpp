#pragma once

#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "latro/tasks.hpp"
#include "latro/trainer.hpp"

namespace latro {

struct ModelConfig {
  std::string model_class = "tiny_transformer";  // tiny_transformer | tabular
  int embed_dim = 32;
  int max_positions = 64;
  int context_order = 1;  // tabular
  double init_stddev = 0.08;

  void validate() const {
    require(model_class == "tiny_transformer" || model_class == "tabular",
            "model.class must be tiny_transformer or tabular");
  }
};

struct EvalConfig {
  std::vector<int> k_list = {1, 2, 4, 8, 16, 32};
  std::vector<std::size_t> l_list;
  double temperature = 1.0;
};

struct IoConfig {
  std::string output_dir = "out";
  std::string train_data;
  std::string eval_data;
  std::string checkpoint;
  std::vector<std::string> checkpoints;  // for ablation across checkpoints
  std::string resume;                    // previous run directory
  std::string rollout_dump;              // optional JSONL dump of every rollout
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  tasks::TaskSpec task;
  ModelConfig model;
  TrainerConfig trainer;
  EvalConfig eval;
  IoConfig io;
  // The LaTRO command runs this many direct-SFT steps before the main loop,
  // standing in for an instruction-tuned starting point.
  long warm_start_steps = 200;
  double warm_start_learning_rate = 0.0;  // 0 = use trainer.learning_rate
};

namespace config_detail {

// Strict field reader: every key in the object must be consumed, otherwise we
// fail fast naming the full key path.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    require_object();
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value at " + path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const nlohmann::json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown config key: " + path_ + "." + it.key());
      }
    }
  }

 private:
  void require_object() const {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void parse_task(const nlohmann::json& j, tasks::TaskSpec& out) {
  Fields f(j, "task");
  f.get("name", out.name);
  f.get("operand_count", out.operand_count);
  f.get("digit_lo", out.digit_lo);
  f.get("digit_hi", out.digit_hi);
  f.get("length_lo", out.length_lo);
  f.get("length_hi", out.length_hi);
  f.get("alphabet_size", out.alphabet_size);
  f.get("train_size", out.train_size);
  f.get("eval_size", out.eval_size);
  f.finish();
}

inline void parse_model(const nlohmann::json& j, ModelConfig& out) {
  Fields f(j, "model");
  f.get("class", out.model_class);
  f.get("embed_dim", out.embed_dim);
  f.get("max_positions", out.max_positions);
  f.get("context_order", out.context_order);
  f.get("init_stddev", out.init_stddev);
  f.finish();
}

inline void parse_trainer(const nlohmann::json& j, TrainerConfig& out) {
  Fields f(j, "trainer");
  f.get("k", out.k);
  f.get("beta_kl", out.beta_kl);
  f.get("gamma_trunc", out.gamma_trunc);
  f.get("temperature", out.temperature);
  f.get("rationale_cap", out.rationale_cap);
  f.get("learning_rate", out.learning_rate);
  f.get("lr_schedule", out.lr_schedule);
  f.get("optimizer", out.optimizer);
  f.get("adam_beta1", out.adam_beta1);
  f.get("adam_beta2", out.adam_beta2);
  f.get("adam_epsilon", out.adam_epsilon);
  f.get("weight_decay", out.weight_decay);
  f.get("epochs", out.epochs);
  f.get("minibatch_size", out.minibatch_size);
  f.get("max_steps", out.max_steps);
  f.get("clip_gradients", out.clip_gradients);
  f.get("clip_norm", out.clip_norm);
  f.finish();
}

inline void parse_eval(const nlohmann::json& j, EvalConfig& out) {
  Fields f(j, "eval");
  f.get("k_list", out.k_list);
  f.get("l_list", out.l_list);
  f.get("temperature", out.temperature);
  f.finish();
}

inline void parse_io(const nlohmann::json& j, IoConfig& out) {
  Fields f(j, "io");
  f.get("output_dir", out.output_dir);
  f.get("train_data", out.train_data);
  f.get("eval_data", out.eval_data);
  f.get("checkpoint", out.checkpoint);
  f.get("checkpoints", out.checkpoints);
  f.get("resume", out.resume);
  f.get("rollout_dump", out.rollout_dump);
  f.finish();
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  config_detail::Fields f(j, "config");
  f.get("seed", cfg.seed);
  f.get("threads", cfg.threads);
  f.get("warm_start_steps", cfg.warm_start_steps);
  f.get("warm_start_learning_rate", cfg.warm_start_learning_rate);
  if (const nlohmann::json* sub = f.sub("task")) config_detail::parse_task(*sub, cfg.task);
  if (const nlohmann::json* sub = f.sub("model")) config_detail::parse_model(*sub, cfg.model);
  if (const nlohmann::json* sub = f.sub("trainer")) config_detail::parse_trainer(*sub, cfg.trainer);
  if (const nlohmann::json* sub = f.sub("eval")) config_detail::parse_eval(*sub, cfg.eval);
  if (const nlohmann::json* sub = f.sub("io")) config_detail::parse_io(*sub, cfg.io);
  f.finish();

  // Environment may override exactly two settings.
  if (const char* dir = std::getenv("LATRO_OUTPUT_DIR")) cfg.io.output_dir = dir;
  if (const char* threads = std::getenv("LATRO_THREADS")) {
    try {
      cfg.threads = std::stoi(threads);
    } catch (...) {
      throw ConfigError("LATRO_THREADS must be an integer");
    }
  }
  require(cfg.threads >= 1, "threads must be >= 1");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

// Full echo of a config, defaults included, written next to every command's
// outputs so a run is reproducible from its own directory.
inline nlohmann::json resolved_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["warm_start_steps"] = cfg.warm_start_steps;
  j["warm_start_learning_rate"] = cfg.warm_start_learning_rate;
  j["task"] = {{"name", cfg.task.name},
               {"operand_count", cfg.task.operand_count},
               {"digit_lo", cfg.task.digit_lo},
               {"digit_hi", cfg.task.digit_hi},
               {"length_lo", cfg.task.length_lo},
               {"length_hi", cfg.task.length_hi},
               {"alphabet_size", cfg.task.alphabet_size},
               {"train_size", cfg.task.train_size},
               {"eval_size", cfg.task.eval_size}};
  j["model"] = {{"class", cfg.model.model_class},
                {"embed_dim", cfg.model.embed_dim},
                {"max_positions", cfg.model.max_positions},
                {"context_order", cfg.model.context_order},
                {"init_stddev", cfg.model.init_stddev}};
  j["trainer"] = {{"k", cfg.trainer.k},
                  {"beta_kl", cfg.trainer.beta_kl},
                  {"gamma_trunc", cfg.trainer.gamma_trunc},
                  {"temperature", cfg.trainer.temperature},
                  {"rationale_cap", cfg.trainer.rationale_cap},
                  {"learning_rate", cfg.trainer.learning_rate},
                  {"lr_schedule", cfg.trainer.lr_schedule},
                  {"optimizer", cfg.trainer.optimizer},
                  {"adam_beta1", cfg.trainer.adam_beta1},
                  {"adam_beta2", cfg.trainer.adam_beta2},
                  {"adam_epsilon", cfg.trainer.adam_epsilon},
                  {"weight_decay", cfg.trainer.weight_decay},
                  {"epochs", cfg.trainer.epochs},
                  {"minibatch_size", cfg.trainer.minibatch_size},
                  {"max_steps", cfg.trainer.max_steps},
                  {"clip_gradients", cfg.trainer.clip_gradients},
                  {"clip_norm", cfg.trainer.clip_norm}};
  j["eval"] = {{"k_list", cfg.eval.k_list},
               {"l_list", cfg.eval.l_list},
               {"temperature", cfg.eval.temperature}};
  j["io"] = {{"output_dir", cfg.io.output_dir},
             {"train_data", cfg.io.train_data},
             {"eval_data", cfg.io.eval_data},
             {"checkpoint", cfg.io.checkpoint},
             {"checkpoints", cfg.io.checkpoints},
             {"resume", cfg.io.resume},
             {"rollout_dump", cfg.io.rollout_dump}};
  return j;
}

}  // namespace latro
