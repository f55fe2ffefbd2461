#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kge/autograd.hpp"
#include "kge/kgdata.hpp"
#include "kge/numeric.hpp"
#include "kge/rng.hpp"

namespace kge {

enum class ModelKind { kDistMult, kComplEx, kTucker, kLowFER };

const char* model_kind_name(ModelKind kind);
// Case-insensitive; throws ConfigError on unknown names.
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::kDistMult;
  std::size_t entity_dim = 100;
  std::size_t relation_dim = 100;  // only TuckER and LowFER may differ from entity_dim
  std::size_t lowfer_rank = 30;
  double input_dropout = 0.3;   // dropout1
  double hidden_dropout = 0.2;  // dropout2
  double output_dropout = 0.3;  // dropout3
  bool batchnorm = false;

  // Batchnorm is customary for TuckER/LowFER and off for DistMult/ComplEx.
  static bool default_batchnorm(ModelKind kind) { return kind == ModelKind::kTucker || kind == ModelKind::kLowFER; }
  // Throws ConfigError on inconsistent settings.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Shapes of the distillation block's projections, for parameter counting.
struct BlockDims {
  std::uint64_t embedding_dim = 0;
  std::uint64_t projection_dim = 0;
  std::uint64_t batch_size = 0;
};

// Learnable-scalar count: embedding tables, core or factors, batchnorm scale
// and shift, plus the block projections when `block` is given. Closed form.
std::uint64_t count_parameters(const ModelConfig& config, std::uint64_t num_entities, std::uint64_t num_relations,
                               const std::optional<BlockDims>& block = std::nullopt);

// Bare scoring functions over plain tensors: logits[i, t] for every entity t.
Tensor score_distmult(const Tensor& h, const Tensor& r, const Tensor& entities);
Tensor score_complex(const Tensor& h, const Tensor& r, const Tensor& entities);
Tensor score_tucker(const Tensor& h, const Tensor& r, const Tensor& core, const Tensor& entities);
Tensor score_lowfer(const Tensor& h, const Tensor& r, const Tensor& u, const Tensor& v, std::size_t rank,
                    const Tensor& entities);

// Differentiable counterparts used by the model and by gradient tests.
namespace scoring {
Var distmult_interaction(const Var& h, const Var& r);
Var complex_interaction(const Var& h, const Var& r);
Var tucker_interaction(const Var& h, const Var& r, const Var& core);
Var lowfer_interaction(const Var& h, const Var& r, const Var& u, const Var& v, std::size_t rank);
// logits = z * E^T
Var contract_entities(const Var& z, const Var& entities);
}  // namespace scoring

// One of the four scoring models with its embedding tables, interaction
// parameters and optional batchnorm layers.
class KgeModel {
 public:
  KgeModel(const ModelConfig& config, std::size_t num_entities, std::size_t num_relations, RngState& init_rng);

  const ModelConfig& config() const { return config_; }
  std::size_t num_entities() const { return entities_.value().dim(0); }
  std::size_t num_relations() const { return relations_.value().dim(0); }

  // Logits [queries x N_e]. In inference mode dropout is the identity,
  // batchnorm uses running statistics and rng is untouched.
  Var forward(std::span<const Query> queries, bool training, RngState& rng);
  Var forward(std::span<const EntityId> heads, std::span<const RelationId> relations, bool training, RngState& rng);

  Parameter& entities() { return entities_; }
  const Parameter& entities() const { return entities_; }
  Parameter& relations() { return relations_; }

  // All learnable parameters in a fixed order.
  std::vector<Parameter*> parameters();
  // Non-learned state (batchnorm running statistics) by name.
  std::vector<std::pair<std::string, Tensor*>> buffers();

 private:
  ModelConfig config_;
  Parameter entities_;
  Parameter relations_;
  Parameter core_;      // TuckER
  Parameter factor_u_;  // LowFER
  Parameter factor_v_;  // LowFER
  std::optional<BatchNorm> input_norm_;
  std::optional<BatchNorm> output_norm_;
};

}  // namespace kge
