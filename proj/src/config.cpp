#include "crkt/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace crkt {

using nlohmann::json;

void validate(const LossConfig& c) {
  if (!(c.alpha >= 0.0) || !(c.beta >= 0.0) || !std::isfinite(c.alpha) || !std::isfinite(c.beta)) {
    throw ConfigError("loss: alpha and beta must be finite and >= 0");
  }
  if (!(c.flip_rate >= 0.0 && c.flip_rate <= 1.0)) throw ConfigError("loss: flip_rate must lie in [0, 1]");
  if (!(c.band_low >= 0.0 && c.band_low < c.band_high && c.band_high <= 1.0)) {
    throw ConfigError("loss: need 0 <= band_low < band_high <= 1");
  }
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("train: learning_rate must be > 0");
  if (c.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (c.patience < 1 || c.patience > c.max_epochs) throw ConfigError("train: need 1 <= patience <= max_epochs");
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must lie in [0, 1)");
  }
  if (c.min_len < 2 || c.max_len < c.min_len) throw ConfigError("train: need max_len >= min_len >= 2");
  if (!(c.grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
}

namespace {

json to_json(const ModelConfig& c) {
  return {{"d_q", c.d_q},
          {"d_c", c.d_c},
          {"d_g", c.d_g},
          {"gnn_layers", c.gnn_layers},
          {"top_k", c.top_k},
          {"lambda", c.lambda},
          {"heads", c.heads},
          {"distance", c.distance},
          {"sigmoid_final_layer", c.sigmoid_final_layer},
          {"eta_init", c.eta_init},
          {"ablation", to_string(c.ablation)}};
}

json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"flip_rate", c.flip_rate},
          {"band_low", c.band_low},
          {"band_high", c.band_high}};
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"freeze_augmentation", c.freeze_augmentation},
          {"validation_fraction", c.validation_fraction},
          {"max_len", c.max_len},
          {"min_len", c.min_len},
          {"grad_clip", c.grad_clip}};
}

// Overlays `j` on the JSON image of `defaults` and converts back, rejecting
// unknown keys and type changes.
json overlay(const json& defaults, const json& j, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  json out = defaults;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError(section + ": unknown key '" + key + "'");
    const auto& d = defaults[key];
    const bool ok = (d.is_number() && value.is_number()) || (d.is_boolean() && value.is_boolean()) ||
                    (d.is_string() && value.is_string());
    if (!ok) throw ConfigError(section + "." + key + ": wrong type");
    if (d.is_number_integer() && !value.is_number_integer()) {
      throw ConfigError(section + "." + key + ": expected an integer");
    }
    out[key] = value;
  }
  return out;
}

ModelConfig model_from(const json& j) {
  ModelConfig c;
  const json m = overlay(to_json(c), j, "model");
  c.d_q = m["d_q"];
  c.d_c = m["d_c"];
  c.d_g = m["d_g"];
  c.gnn_layers = m["gnn_layers"];
  c.top_k = m["top_k"];
  c.lambda = m["lambda"];
  c.heads = m["heads"];
  c.distance = m["distance"];
  c.sigmoid_final_layer = m["sigmoid_final_layer"];
  c.eta_init = m["eta_init"];
  try {
    c.ablation = ablation_from_string(m["ablation"]);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model.ablation: ") + e.what());
  }
  return c;
}

LossConfig loss_from(const json& j) {
  LossConfig c;
  const json m = overlay(to_json(c), j, "loss");
  c.alpha = m["alpha"];
  c.beta = m["beta"];
  c.flip_rate = m["flip_rate"];
  c.band_low = m["band_low"];
  c.band_high = m["band_high"];
  return c;
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  const json m = overlay(to_json(c), j, "train");
  c.learning_rate = m["learning_rate"];
  c.max_epochs = m["max_epochs"];
  c.patience = m["patience"];
  c.batch_size = m["batch_size"];
  c.seed = m["seed"];
  c.freeze_augmentation = m["freeze_augmentation"];
  c.validation_fraction = m["validation_fraction"];
  c.max_len = m["max_len"];
  c.min_len = m["min_len"];
  c.grad_clip = m["grad_clip"];
  return c;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
}

RunConfig run_from(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "loss" && key != "train") throw ConfigError("config: unknown section '" + key + "'");
  }
  RunConfig c;
  if (j.contains("model")) c.model = model_from(j["model"]);
  if (j.contains("loss")) c.loss = loss_from(j["loss"]);
  if (j.contains("train")) c.train = train_from(j["train"]);
  validate(c.loss);
  validate(c.train);
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) { return to_json(c).dump(); }

ModelConfig model_config_from_json(const std::string& text) { return model_from(parse(text)); }

RunConfig run_config_from_json(const std::string& text) { return run_from(parse(text)); }

std::string run_config_to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)}, {"loss", to_json(c.loss)}, {"train", to_json(c.train)}}.dump(2);
}

std::vector<RunConfig> expand_grid(const std::string& text) {
  const json root = parse(text);
  if (!root.is_object()) throw ConfigError("config: expected an object");
  struct Axis {
    json::json_pointer where;
    json values;
  };
  std::vector<Axis> axes;
  for (const auto& [section, body] : root.items()) {
    if (!body.is_object()) continue;
    for (const auto& [key, value] : body.items()) {
      if (value.is_array()) {
        if (value.empty()) throw ConfigError(section + "." + key + ": empty grid axis");
        axes.push_back({json::json_pointer("/" + section + "/" + key), value});
      }
    }
  }
  std::vector<RunConfig> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    json point = root;
    for (std::size_t a = 0; a < axes.size(); ++a) point[axes[a].where] = axes[a].values[idx[a]];
    out.push_back(run_from(point));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return out;
    }
    if (axes.empty()) return out;
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace crkt
