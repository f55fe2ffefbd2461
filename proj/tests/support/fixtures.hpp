#pragma once

#include <memory>

#include "kge/config.hpp"
#include "kge/kgdata.hpp"

namespace kge::testing {

// The 30-entity, 3-relation symmetric toy graph used across the suite.
inline std::shared_ptr<const TripleStore> toy_store(std::uint64_t seed = 7) {
  return std::make_shared<const TripleStore>(augment_reciprocal(make_synthetic(30, 3, 20, seed)));
}

inline RunConfig toy_config(ModelKind kind, std::size_t epochs, bool isd) {
  RunConfig c;
  c.model.kind = kind;
  c.model.entity_dim = 8;
  c.model.relation_dim = (kind == ModelKind::kTucker || kind == ModelKind::kLowFER) ? 6 : 8;
  c.model.lowfer_rank = 3;
  c.model.batchnorm = ModelConfig::default_batchnorm(kind);
  c.train.batch_size = 16;
  c.train.learning_rate = 0.01;
  c.train.epochs = epochs;
  c.train.seed = 11;
  c.train.eval_every = 0;
  c.isd.enabled = isd;
  c.isd.temperature_exponent = 1;
  return c;
}

}  // namespace kge::testing
