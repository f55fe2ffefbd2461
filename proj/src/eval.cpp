#include "kge/eval.hpp"

#include <algorithm>

#include "kge/errors.hpp"

namespace kge {

double filtered_rank(std::span<const double> logits, EntityId truth, std::span<const EntityId> filter,
                     TiePolicy policy) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= logits.size()) {
    throw ParameterError("true entity id " + std::to_string(truth) + " out of range");
  }
  Tensor row({1, logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  const std::span<const std::int32_t> filters[] = {filter};
  return kernels::filtered_ranks(row, std::span<const std::int32_t>(&truth, 1), filters, policy)[0];
}

namespace {

DirectionReport summarize_direction(std::vector<double> ranks) {
  DirectionReport out;
  if (ranks.empty()) return out;
  std::sort(ranks.begin(), ranks.end(), std::greater<>());  // smallest reciprocal first
  const double n = static_cast<double>(ranks.size());
  double reciprocal = 0.0;
  std::size_t hits1 = 0, hits3 = 0, hits10 = 0;
  for (double r : ranks) {
    reciprocal += 1.0 / r;
    hits1 += r <= 1.0;
    hits3 += r <= 3.0;
    hits10 += r <= 10.0;
  }
  out.mrr = reciprocal / n;
  out.h1 = static_cast<double>(hits1) / n;
  out.h3 = static_cast<double>(hits3) / n;
  out.h10 = static_cast<double>(hits10) / n;
  return out;
}

}  // namespace

MetricsReport summarize(std::span<const RankResult> ranks) {
  MetricsReport report;
  report.num_triples = ranks.size();
  if (ranks.empty()) return report;
  std::vector<double> heads, tails, both;
  for (const auto& r : ranks) {
    heads.push_back(r.head_rank);
    tails.push_back(r.tail_rank);
    both.push_back(r.head_rank);
    both.push_back(r.tail_rank);
  }
  report.head = summarize_direction(std::move(heads));
  report.tail = summarize_direction(std::move(tails));
  const DirectionReport all = summarize_direction(std::move(both));
  report.mrr = all.mrr;
  report.h1 = all.h1;
  report.h3 = all.h3;
  report.h10 = all.h10;
  return report;
}

std::vector<RankResult> rank_triples(KgeModel& model, std::span<const Triple> triples,
                                     std::size_t num_base_relations, const FilterIndex& filter,
                                     const EvalOptions& options) {
  std::vector<Triple> base;
  for (const Triple& t : triples)
    if (static_cast<std::size_t>(t.relation) < num_base_relations) base.push_back(t);
  if (base.empty()) throw ParameterError("evaluation split is empty");
  if (model.num_relations() < 2 * num_base_relations) {
    throw ParameterError("model has no reciprocal relations; augment the store before training");
  }

  const auto offset = static_cast<RelationId>(num_base_relations);
  const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
  RngState unused;
  std::vector<RankResult> out(base.size());
  for (std::size_t begin = 0; begin < base.size(); begin += chunk) {
    const std::size_t end = std::min(base.size(), begin + chunk);
    const std::size_t n = end - begin;
    // Rows [0, n) are tail queries, rows [n, 2n) the reciprocal head queries.
    std::vector<EntityId> heads(2 * n), truths(2 * n);
    std::vector<RelationId> rels(2 * n);
    std::vector<std::span<const EntityId>> filters(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Triple& t = base[begin + i];
      heads[i] = t.head;
      rels[i] = t.relation;
      truths[i] = t.tail;
      filters[i] = filter.tails(t.head, t.relation);
      heads[n + i] = t.tail;
      rels[n + i] = t.relation + offset;
      truths[n + i] = t.head;
      filters[n + i] = filter.tails(t.tail, t.relation + offset);
    }
    const Var logits = model.forward(heads, rels, /*training=*/false, unused);
    const auto ranks = kernels::filtered_ranks(logits.value(), truths, filters, options.tie_policy);
    for (std::size_t i = 0; i < n; ++i) out[begin + i] = {ranks[n + i], ranks[i]};
  }
  return out;
}

MetricsReport evaluate(KgeModel& model, std::span<const Triple> triples, std::size_t num_base_relations,
                       const FilterIndex& filter, const EvalOptions& options) {
  const auto ranks = rank_triples(model, triples, num_base_relations, filter, options);
  return summarize(ranks);
}

nlohmann::json to_json(const MetricsReport& report) {
  auto direction = [](const DirectionReport& d) {
    return nlohmann::json{{"mrr", d.mrr}, {"h1", d.h1}, {"h3", d.h3}, {"h10", d.h10}};
  };
  return nlohmann::json{{"mrr", report.mrr},   {"h1", report.h1},
                        {"h3", report.h3},     {"h10", report.h10},
                        {"head", direction(report.head)}, {"tail", direction(report.tail)},
                        {"num_triples", report.num_triples}};
}

}  // namespace kge
