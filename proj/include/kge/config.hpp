#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "kge/isd.hpp"
#include "kge/models.hpp"

namespace kge {

struct TrainConfig {
  std::size_t batch_size = 512;
  double learning_rate = 0.001;
  double lr_decay = 0.99;
  double label_smoothing = 0.1;
  std::size_t epochs = 1500;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;  // 0 disables periodic validation

  void validate() const;
};

// Everything a run needs. JSON layout:
//   { dataset_dir, output_dir,
//     model {kind, d_e, d_r, k_l, dropout1, dropout2, dropout3, batchnorm},
//     train {batch_size, lr, lr_decay, label_smoothing, epochs, seed, eval_every},
//     isd   {enabled, m_exponent, k_b, beta_init, static_input} }
// Omitted keys take their defaults; unknown keys are rejected.
struct RunConfig {
  std::string dataset_dir;
  std::string output_dir;
  ModelConfig model;
  TrainConfig train;
  DistillConfig isd;

  // Projection dim with the "same as d_e" default resolved.
  std::size_t projection_dim() const { return isd.projection_dim ? isd.projection_dim : model.entity_dim; }
  void validate() const;
};

// Throws ConfigError naming the offending key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully default-filled echo; parse_run_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& config);

}  // namespace kge
