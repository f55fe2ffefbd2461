#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "kge/kernels.hpp"
#include "kge/kgdata.hpp"
#include "kge/models.hpp"

namespace kge {

struct RankResult {
  double head_rank = 1.0;  // rank of h for (?, r, t), via (t, r^-1, ?)
  double tail_rank = 1.0;  // rank of t for (h, r, ?)
};

struct DirectionReport {
  double mrr = 0.0, h1 = 0.0, h3 = 0.0, h10 = 0.0;
};

struct MetricsReport {
  double mrr = 0.0, h1 = 0.0, h3 = 0.0, h10 = 0.0;
  DirectionReport head;
  DirectionReport tail;
  std::size_t num_triples = 0;
};

// Filtered rank of `truth` among all entities minus (filter \ {truth}).
// Ties are resolved per `policy` (average: 1 + greater + equal / 2).
double filtered_rank(std::span<const double> logits, EntityId truth, std::span<const EntityId> filter,
                     TiePolicy policy = TiePolicy::kAverage);

// MRR and H@{1,3,10} over both directions. Independent of the order of
// `ranks`: contributions are summed in sorted order.
MetricsReport summarize(std::span<const RankResult> ranks);

struct EvalOptions {
  TiePolicy tie_policy = TiePolicy::kAverage;
  std::size_t chunk_size = 256;  // triples scored per forward pass
};

// Ranks every base triple (relation < num_base_relations) in both
// directions. The store must be reciprocal-augmented and the filter index
// built from it. Throws ParameterError when there is nothing to evaluate.
std::vector<RankResult> rank_triples(KgeModel& model, std::span<const Triple> triples,
                                     std::size_t num_base_relations, const FilterIndex& filter,
                                     const EvalOptions& options = {});
MetricsReport evaluate(KgeModel& model, std::span<const Triple> triples, std::size_t num_base_relations,
                       const FilterIndex& filter, const EvalOptions& options = {});

nlohmann::json to_json(const MetricsReport& report);

}  // namespace kge
