#include "kge/models.hpp"

#include <algorithm>
#include <cctype>

#include "kge/errors.hpp"
#include "kge/kernels.hpp"

namespace kge {

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kComplEx:
      return "complex";
    case ModelKind::kTucker:
      return "tucker";
    case ModelKind::kLowFER:
      return "lowfer";
    case ModelKind::kDistMult:
    default:
      return "distmult";
  }
}

ModelKind parse_model_kind(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "distmult") return ModelKind::kDistMult;
  if (lower == "complex") return ModelKind::kComplEx;
  if (lower == "tucker") return ModelKind::kTucker;
  if (lower == "lowfer") return ModelKind::kLowFER;
  throw ConfigError("unknown model kind '" + name + "' (expected distmult, complex, tucker or lowfer)");
}

void ModelConfig::validate() const {
  if (entity_dim < 1) throw ConfigError("entity dimension must be at least 1");
  if (relation_dim < 1) throw ConfigError("relation dimension must be at least 1");
  if (kind == ModelKind::kComplEx && entity_dim % 2 != 0) {
    throw ConfigError("ComplEx needs an even entity dimension, got " + std::to_string(entity_dim));
  }
  if ((kind == ModelKind::kDistMult || kind == ModelKind::kComplEx) && relation_dim != entity_dim) {
    throw ConfigError(std::string(model_kind_name(kind)) + " requires relation dimension == entity dimension");
  }
  if (kind == ModelKind::kLowFER && lowfer_rank < 1) throw ConfigError("LowFER rank must be at least 1");
  for (double rate : {input_dropout, hidden_dropout, output_dropout}) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

std::uint64_t count_parameters(const ModelConfig& config, std::uint64_t num_entities, std::uint64_t num_relations,
                               const std::optional<BlockDims>& block) {
  const std::uint64_t de = config.entity_dim;
  const std::uint64_t dr = (config.kind == ModelKind::kTucker || config.kind == ModelKind::kLowFER)
                               ? config.relation_dim
                               : config.entity_dim;
  std::uint64_t total = num_entities * de + num_relations * dr;
  if (config.kind == ModelKind::kTucker) total += de * dr * de;
  if (config.kind == ModelKind::kLowFER) total += (de + dr) * config.lowfer_rank * de;
  if (config.batchnorm) total += 4 * de;
  if (block) total += 2 * block->embedding_dim * block->projection_dim + block->batch_size * num_entities;
  return total;
}

namespace scoring {

Var distmult_interaction(const Var& h, const Var& r) { return ops::hadamard(h, r); }

Var complex_interaction(const Var& h, const Var& r) { return ops::complex_product(h, r); }

Var tucker_interaction(const Var& h, const Var& r, const Var& core) { return ops::tucker_interaction(h, r, core); }

Var lowfer_interaction(const Var& h, const Var& r, const Var& u, const Var& v, std::size_t rank) {
  return ops::sum_pool(ops::hadamard(ops::matmul(h, u), ops::matmul(r, v)), rank);
}

Var contract_entities(const Var& z, const Var& entities) { return ops::matmul_bt(z, entities); }

}  // namespace scoring

namespace {

void require_rows_match(const Tensor& h, const Tensor& r) {
  if (h.rank() != 2 || r.rank() != 2 || h.dim(0) != r.dim(0)) {
    throw DimensionError("score: head " + shape_string(h.shape()) + " and relation " + shape_string(r.shape()) +
                         " batches differ");
  }
}

Tensor contract(const Var& z, const Tensor& entities) {
  return scoring::contract_entities(z, Var(entities)).value();
}

}  // namespace

// Each term is formed as r_j * (h_j * t_j) so the result is exactly
// symmetric under h <-> t.
Tensor score_distmult(const Tensor& h, const Tensor& r, const Tensor& entities) {
  require_rows_match(h, r);
  require_same_shape(h, r, "score_distmult");
  if (entities.rank() != 2 || entities.dim(1) != h.dim(1)) {
    throw DimensionError("score_distmult: entity table " + shape_string(entities.shape()) + " does not match " +
                         shape_string(h.shape()));
  }
  const std::size_t bs = h.dim(0), d = h.dim(1), n = entities.dim(0);
  Tensor out({bs, n});
  for (std::size_t i = 0; i < bs; ++i)
    for (std::size_t t = 0; t < n; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += r.at(i, j) * (h.at(i, j) * entities.at(t, j));
      out.at(i, t) = s;
    }
  return out;
}

Tensor score_complex(const Tensor& h, const Tensor& r, const Tensor& entities) {
  require_rows_match(h, r);
  return contract(scoring::complex_interaction(Var(h), Var(r)), entities);
}

Tensor score_tucker(const Tensor& h, const Tensor& r, const Tensor& core, const Tensor& entities) {
  require_rows_match(h, r);
  return contract(scoring::tucker_interaction(Var(h), Var(r), Var(core)), entities);
}

Tensor score_lowfer(const Tensor& h, const Tensor& r, const Tensor& u, const Tensor& v, std::size_t rank,
                    const Tensor& entities) {
  require_rows_match(h, r);
  return contract(scoring::lowfer_interaction(Var(h), Var(r), Var(u), Var(v), rank), entities);
}

namespace {

Tensor normal_table(std::size_t rows, std::size_t cols, double stddev, RngState& rng) {
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor uniform_tensor(Shape shape, double bound, RngState& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

constexpr double kEmbeddingStd = 0.05;
constexpr double kFactorBound = 0.1;

}  // namespace

KgeModel::KgeModel(const ModelConfig& config, std::size_t num_entities, std::size_t num_relations, RngState& init_rng)
    : config_(config) {
  config_.validate();
  const std::size_t de = config_.entity_dim, dr = config_.relation_dim;
  entities_ = Parameter("entity", normal_table(num_entities, de, kEmbeddingStd, init_rng));
  relations_ = Parameter("relation", normal_table(num_relations, dr, kEmbeddingStd, init_rng));
  if (config_.kind == ModelKind::kTucker) {
    core_ = Parameter("core", uniform_tensor({de, dr, de}, kFactorBound, init_rng));
  } else if (config_.kind == ModelKind::kLowFER) {
    factor_u_ = Parameter("lowfer_u", uniform_tensor({de, config_.lowfer_rank * de}, kFactorBound, init_rng));
    factor_v_ = Parameter("lowfer_v", uniform_tensor({dr, config_.lowfer_rank * de}, kFactorBound, init_rng));
  }
  if (config_.batchnorm) {
    input_norm_.emplace("bn_input", de);
    output_norm_.emplace("bn_output", de);
  }
}

Var KgeModel::forward(std::span<const Query> queries, bool training, RngState& rng) {
  std::vector<EntityId> heads;
  std::vector<RelationId> rels;
  heads.reserve(queries.size());
  rels.reserve(queries.size());
  for (const Query& q : queries) {
    heads.push_back(q.head);
    rels.push_back(q.relation);
  }
  return forward(heads, rels, training, rng);
}

Var KgeModel::forward(std::span<const EntityId> heads, std::span<const RelationId> relations, bool training,
                      RngState& rng) {
  if (heads.size() != relations.size()) throw DimensionError("forward: head and relation id counts differ");
  Var entity_table = entities_.var();
  Var h = ops::gather_rows(entity_table, heads);
  Var r = ops::gather_rows(relations_.var(), relations);

  if (input_norm_) h = (*input_norm_)(h, training);
  h = dropout(h, config_.input_dropout, rng, training);

  Var z;
  switch (config_.kind) {
    case ModelKind::kDistMult:
      z = scoring::distmult_interaction(h, r);
      break;
    case ModelKind::kComplEx:
      z = scoring::complex_interaction(h, r);
      break;
    case ModelKind::kTucker:
      z = scoring::tucker_interaction(h, r, core_.var());
      break;
    case ModelKind::kLowFER:
      z = scoring::lowfer_interaction(h, r, factor_u_.var(), factor_v_.var(), config_.lowfer_rank);
      break;
  }
  z = dropout(z, config_.hidden_dropout, rng, training);
  if (output_norm_) z = (*output_norm_)(z, training);
  z = dropout(z, config_.output_dropout, rng, training);
  return scoring::contract_entities(z, entity_table);
}

std::vector<Parameter*> KgeModel::parameters() {
  std::vector<Parameter*> out{&entities_, &relations_};
  if (core_.valid()) out.push_back(&core_);
  if (factor_u_.valid()) out.push_back(&factor_u_);
  if (factor_v_.valid()) out.push_back(&factor_v_);
  for (auto* norm : {&input_norm_, &output_norm_}) {
    if (*norm) {
      out.push_back(&(*norm)->weight());
      out.push_back(&(*norm)->bias());
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> KgeModel::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (input_norm_) {
    out.emplace_back("bn_input_running_mean", &input_norm_->running_mean());
    out.emplace_back("bn_input_running_var", &input_norm_->running_var());
  }
  if (output_norm_) {
    out.emplace_back("bn_output_running_mean", &output_norm_->running_mean());
    out.emplace_back("bn_output_running_var", &output_norm_->running_var());
  }
  return out;
}

}  // namespace kge
