#include "kge/config.hpp"

#include <fstream>
#include <set>

#include "kge/errors.hpp"

namespace kge {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay must lie in (0, 1]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("train.label_smoothing must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  isd.validate();
}

namespace {

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "'" + (where.empty() ? "" : " in " + where));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() || it->template get<long long>() < 0) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    } else {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError("invalid value for '" + where + "." + key + "'");
  }
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  reject_unknown(doc, "", {"dataset_dir", "output_dir", "model", "train", "isd"});
  RunConfig c;
  read(doc, "dataset_dir", "", c.dataset_dir);
  read(doc, "output_dir", "", c.output_dir);

  bool batchnorm_given = false;
  if (auto it = doc.find("model"); it != doc.end()) {
    const json& m = *it;
    reject_unknown(m, "model", {"kind", "d_e", "d_r", "k_l", "dropout1", "dropout2", "dropout3", "batchnorm"});
    std::string kind = model_kind_name(c.model.kind);
    read(m, "kind", "model", kind);
    c.model.kind = parse_model_kind(kind);
    read(m, "d_e", "model", c.model.entity_dim);
    c.model.relation_dim = c.model.entity_dim;
    read(m, "d_r", "model", c.model.relation_dim);
    read(m, "k_l", "model", c.model.lowfer_rank);
    read(m, "dropout1", "model", c.model.input_dropout);
    read(m, "dropout2", "model", c.model.hidden_dropout);
    read(m, "dropout3", "model", c.model.output_dropout);
    batchnorm_given = m.contains("batchnorm") && !m["batchnorm"].is_null();
    read(m, "batchnorm", "model", c.model.batchnorm);
  }
  if (!batchnorm_given) c.model.batchnorm = ModelConfig::default_batchnorm(c.model.kind);

  if (auto it = doc.find("train"); it != doc.end()) {
    const json& t = *it;
    reject_unknown(t, "train", {"batch_size", "lr", "lr_decay", "label_smoothing", "epochs", "seed", "eval_every"});
    read(t, "batch_size", "train", c.train.batch_size);
    read(t, "lr", "train", c.train.learning_rate);
    read(t, "lr_decay", "train", c.train.lr_decay);
    read(t, "label_smoothing", "train", c.train.label_smoothing);
    read(t, "epochs", "train", c.train.epochs);
    read(t, "seed", "train", c.train.seed);
    read(t, "eval_every", "train", c.train.eval_every);
  }

  if (auto it = doc.find("isd"); it != doc.end()) {
    const json& d = *it;
    reject_unknown(d, "isd", {"enabled", "m_exponent", "k_b", "beta_init", "static_input"});
    read(d, "enabled", "isd", c.isd.enabled);
    read(d, "m_exponent", "isd", c.isd.temperature_exponent);
    read(d, "k_b", "isd", c.isd.projection_dim);
    read(d, "beta_init", "isd", c.isd.beta_init);
    read(d, "static_input", "isd", c.isd.static_input);
  }
  if (c.isd.projection_dim == 0) c.isd.projection_dim = c.model.entity_dim;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  return json{
      {"dataset_dir", c.dataset_dir},
      {"output_dir", c.output_dir},
      {"model",
       {{"kind", model_kind_name(c.model.kind)},
        {"d_e", c.model.entity_dim},
        {"d_r", c.model.relation_dim},
        {"k_l", c.model.lowfer_rank},
        {"dropout1", c.model.input_dropout},
        {"dropout2", c.model.hidden_dropout},
        {"dropout3", c.model.output_dropout},
        {"batchnorm", c.model.batchnorm}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"lr", c.train.learning_rate},
        {"lr_decay", c.train.lr_decay},
        {"label_smoothing", c.train.label_smoothing},
        {"epochs", c.train.epochs},
        {"seed", c.train.seed},
        {"eval_every", c.train.eval_every}}},
      {"isd",
       {{"enabled", c.isd.enabled},
        {"m_exponent", c.isd.temperature_exponent},
        {"k_b", c.projection_dim()},
        {"beta_init", c.isd.beta_init},
        {"static_input", c.isd.static_input}}},
  };
}

}  // namespace kge
