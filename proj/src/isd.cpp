#include "kge/isd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kge/errors.hpp"

namespace kge {

double DistillConfig::temperature() const { return std::pow(10.0, temperature_exponent); }

void DistillConfig::validate() const {
  const double t = temperature();
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("distillation temperature 10^m must be positive and finite");
  if (!(beta_init >= 0.0 && beta_init <= 1.0)) throw ConfigError("beta_init must lie in [0, 1]");
}

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, RngState& rng) {
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = rng.normal(0.0, SemanticBlock::kInitStd);
  return t;
}

}  // namespace

SemanticBlock::SemanticBlock(std::size_t embedding_dim, std::size_t projection_dim, std::size_t batch_size,
                             std::size_t num_entities, RngState& init_rng) {
  if (embedding_dim == 0 || projection_dim == 0 || batch_size == 0 || num_entities == 0) {
    throw ConfigError("semantic block dimensions must all be positive");
  }
  central_ = Parameter("isd_central", normal_matrix(embedding_dim, projection_dim, init_rng));
  features_ = Parameter("isd_features", normal_matrix(embedding_dim, projection_dim, init_rng));
  expansion_ = Parameter("isd_expansion", normal_matrix(batch_size, num_entities, init_rng));
}

Var central_feature(const Var& batch_embeddings, const Var& central_projection) {
  return ops::matmul(ops::mean_rows(batch_embeddings), central_projection);
}

Var semantic_features(const Var& batch_embeddings, const Var& feature_projection) {
  return ops::matmul(batch_embeddings, feature_projection);
}

Var partial_similarities(const Var& central, const Var& features) {
  const Var c = central.value().rank() == 1 ? ops::reshape(central, {1, central.value().numel()}) : central;
  return ops::matmul_bt(c, features);
}

Var whole_similarities(const Var& partial, const Var& expansion) {
  const Var s = partial.value().rank() == 1 ? ops::reshape(partial, {1, partial.value().numel()}) : partial;
  if (s.value().dim(1) != expansion.value().dim(0)) {
    throw DimensionError("whole_similarities: " + std::to_string(s.value().dim(1)) +
                         " partial similarities but expansion has " + std::to_string(expansion.value().dim(0)) +
                         " rows");
  }
  return ops::softmax_rows(ops::matmul(s, expansion), 1.0);
}

Var semantic_information(const Var& whole, const Var& entities) {
  const Var q = whole.value().rank() == 1 ? ops::reshape(whole, {1, whole.value().numel()}) : whole;
  return ops::matmul(q, entities);
}

Var SemanticBlock::extract(std::span<const EntityId> batch_entities, const Var& entities) {
  if (batch_entities.size() != batch_size()) {
    throw DimensionError("semantic block is bound to batch size " + std::to_string(batch_size()) + ", got " +
                         std::to_string(batch_entities.size()) + " rows");
  }
  if (entities.value().rank() != 2 || entities.value().dim(0) != num_entities() ||
      entities.value().dim(1) != embedding_dim()) {
    throw DimensionError("semantic block expects an entity table of shape [" + std::to_string(num_entities()) + "x" +
                         std::to_string(embedding_dim()) + "], got " + shape_string(entities.value().shape()));
  }
  const Var batch_embeddings = ops::gather_rows(entities, batch_entities);
  const Var c = central_feature(batch_embeddings, central_.var());
  const Var k = semantic_features(batch_embeddings, features_.var());
  const Var s = partial_similarities(c, k);
  const Var q = whole_similarities(s, expansion_.var());
  return semantic_information(q, entities);
}

Var extract(const Batch& batch, const Var& entities, SemanticBlock& block) {
  const auto heads = batch.heads();
  return block.extract(heads, entities);
}

Var distill_loss(const Var& student, const Var& teacher, double temperature) {
  return ops::distill_kl(student, teacher, temperature);
}

double beta_at_epoch(std::size_t epoch, std::size_t total_epochs, double beta_init) {
  if (total_epochs < 1) throw ParameterError("total epoch count must be at least 1");
  if (epoch > total_epochs) {
    throw ParameterError("epoch " + std::to_string(epoch) + " beyond schedule of " + std::to_string(total_epochs));
  }
  const double beta =
      beta_init * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
  return std::clamp(beta, 0.0, 1.0);
}

Var total_loss(const Var& bce, const Var& kl, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in [0, 1], got " + std::to_string(beta));
  return ops::weighted_sum(bce, 1.0 - beta, kl, beta);
}

}  // namespace kge
