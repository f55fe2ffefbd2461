#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kge/errors.hpp"
#include "kge/eval.hpp"
#include "support/oracles.hpp"

using namespace kge;

namespace {

ModelConfig distmult(std::size_t d) {
  ModelConfig c;
  c.kind = ModelKind::kDistMult;
  c.entity_dim = c.relation_dim = d;
  c.input_dropout = c.hidden_dropout = c.output_dropout = 0.0;
  return c;
}

// Ranks from the library and from the brute-force oracle on the same model.
struct Compared {
  std::vector<RankResult> library;
  std::vector<double> oracle_ranks;  // head, tail per triple
};

Compared compare(KgeModel& model, const TripleStore& base, const TripleStore& aug, std::span<const Triple> triples,
                 TiePolicy policy) {
  const Tensor& e = model.entities().value();
  const Tensor& r = model.relations().value();
  const auto n_base = static_cast<RelationId>(base.num_base_relations);
  auto tail_score = [&](EntityId h, RelationId rel, EntityId c) { return oracle::distmult(e.row(h), r.row(rel), e.row(c)); };
  auto head_score = [&](EntityId c, RelationId rel, EntityId t) {
    return oracle::distmult(e.row(t), r.row(rel + n_base), e.row(c));
  };
  Compared out;
  out.library = rank_triples(model, triples, base.num_base_relations, FilterIndex(aug), {policy, 3});
  out.oracle_ranks = oracle::brute_force_both_directions(base, triples, base.num_entities(), tail_score, head_score, policy);
  return out;
}

TripleStore random_base(std::size_t entities, std::size_t relations, std::size_t triples, RngState& rng) {
  TripleStore s;
  for (std::size_t i = 0; i < entities; ++i) s.vocab.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) s.vocab.add_relation("r" + std::to_string(i));
  s.num_base_relations = relations;
  std::set<Triple> seen;
  while (seen.size() < triples) {
    const Triple t{static_cast<EntityId>(rng.below(entities)), static_cast<RelationId>(rng.below(relations)),
                   static_cast<EntityId>(rng.below(entities))};
    if (!seen.insert(t).second) continue;
    const auto pick = rng.below(5);
    (pick < 3 ? s.train : pick == 3 ? s.valid : s.test).push_back(t);
  }
  return s;
}

}  // namespace

TEST_CASE("filtered rank examples") {
  const std::vector<double> best = {0.1, 3.0, 0.2};
  CHECK(filtered_rank(best, 1, {}) == 1.0);
  const std::vector<double> scores = {9, 7, 5, 3};
  const std::vector<EntityId> filter = {1, 2};
  CHECK(filtered_rank(scores, 2, filter) == 2.0);
  const std::vector<double> tie = {4, 4, 4, 1};
  CHECK(filtered_rank(tie, 0, {}) == 2.0);
  CHECK(filtered_rank(tie, 0, {}, TiePolicy::kOptimistic) == 1.0);
  CHECK(filtered_rank(tie, 0, {}, TiePolicy::kPessimistic) == 3.0);
  CHECK_THROWS_AS(filtered_rank(scores, 4, {}), ParameterError);
  CHECK_THROWS_AS(filtered_rank(scores, -1, {}), ParameterError);
}

TEST_CASE("metric formulas") {
  const std::vector<RankResult> ones = {{1, 1}, {1, 1}};
  const MetricsReport all = summarize(ones);
  CHECK(all.mrr == 1.0);
  CHECK(all.h1 == 1.0);
  CHECK(all.h10 == 1.0);
  const std::vector<RankResult> one = {{2, 4}};
  const MetricsReport r = summarize(one);
  CHECK(r.mrr == 0.375);
  CHECK(r.h1 == 0.0);
  CHECK(r.h3 == 0.5);
  CHECK(r.h10 == 1.0);
  CHECK(r.head.mrr == 0.5);
  CHECK(r.tail.mrr == 0.25);
}

TEST_CASE("hand-built 6-entity graph against the brute-force ranker") {
  // a-b-c-d-e-f with two relations; collisions: (a, likes) has tails b and c.
  TripleStore base;
  for (const char* n : {"a", "b", "c", "d", "e", "f"}) base.vocab.add_entity(n);
  base.vocab.add_relation("likes");
  base.vocab.add_relation("near");
  base.num_base_relations = 2;
  base.train = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 5}, {0, 1, 5}};
  base.valid = {{0, 0, 2}};
  base.test = {{0, 0, 2}, {2, 0, 1}, {3, 1, 2}, {5, 0, 4}, {1, 1, 0}};
  const TripleStore aug = augment_reciprocal(base);
  RngState init(3);
  KgeModel model(distmult(4), 6, 4, init);
  // Duplicate entity rows force exact score ties.
  auto& e = model.entities().value();
  for (std::size_t j = 0; j < 4; ++j) e.at(4, j) = e.at(1, j);
  for (TiePolicy policy : {TiePolicy::kAverage, TiePolicy::kOptimistic, TiePolicy::kPessimistic}) {
    const Compared c = compare(model, base, aug, base.test, policy);
    std::vector<double> flat;
    for (const auto& rr : c.library) {
      flat.push_back(rr.head_rank);
      flat.push_back(rr.tail_rank);
    }
    CHECK(flat == c.oracle_ranks);
    const MetricsReport report = summarize(c.library);
    const oracle::BruteMetrics want = oracle::brute_force_metrics(c.oracle_ranks);
    CHECK(report.mrr == want.mrr);
    CHECK(report.h1 == want.h1);
    CHECK(report.h3 == want.h3);
    CHECK(report.h10 == want.h10);
  }
}

TEST_CASE("random fixtures with integer embeddings (many ties) match the oracle exactly") {
  RngState rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ne = 5 + rng.below(46), nr = 1 + rng.below(3);
    const TripleStore base = random_base(ne, nr, std::min<std::size_t>(3 * ne, 60), rng);
    if (base.test.empty()) continue;
    const TripleStore aug = augment_reciprocal(base);
    RngState init(trial);
    KgeModel model(distmult(3), ne, 2 * nr, init);
    for (Parameter* p : model.parameters())
      for (double& x : p->value().span()) x = static_cast<double>(static_cast<int>(rng.below(5)) - 2);
    const Compared c = compare(model, base, aug, base.test, TiePolicy::kAverage);
    std::vector<double> flat;
    for (const auto& rr : c.library) {
      flat.push_back(rr.head_rank);
      flat.push_back(rr.tail_rank);
    }
    CHECK(flat == c.oracle_ranks);
    const MetricsReport report = summarize(c.library);
    const oracle::BruteMetrics want = oracle::brute_force_metrics(c.oracle_ranks);
    CHECK(report.mrr == want.mrr);
    CHECK(report.h1 == want.h1);
    CHECK(report.h3 == want.h3);
    CHECK(report.h10 == want.h10);
  }
}

TEST_CASE("report invariants, order independence, filtered <= raw") {
  RngState rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const TripleStore base = random_base(30, 2, 80, rng);
    if (base.test.size() < 2) continue;
    const TripleStore aug = augment_reciprocal(base);
    RngState init(trial);
    KgeModel model(distmult(5), 30, 4, init);
    const FilterIndex filter(aug);
    const MetricsReport a = evaluate(model, base.test, 2, filter, {TiePolicy::kAverage, 1});
    std::vector<Triple> shuffled = base.test;
    std::reverse(shuffled.begin(), shuffled.end());
    const MetricsReport b = evaluate(model, shuffled, 2, filter, {TiePolicy::kAverage, 1000});
    CHECK(a.mrr == b.mrr);
    CHECK(a.h1 == b.h1);
    CHECK(a.h3 == b.h3);
    CHECK(a.h10 == b.h10);
    CHECK(a.h1 <= a.h3);
    CHECK(a.h3 <= a.h10);
    CHECK(a.h1 <= a.mrr);
    CHECK(a.mrr <= 1.0);

    const auto filtered = rank_triples(model, base.test, 2, filter);
    const auto raw = rank_triples(model, base.test, 2, FilterIndex());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      CHECK(filtered[i].head_rank <= raw[i].head_rank);
      CHECK(filtered[i].tail_rank <= raw[i].tail_rank);
      CHECK(filtered[i].tail_rank >= 1.0);
      CHECK(filtered[i].tail_rank <= 30.0);
    }
  }
}

TEST_CASE("evaluation errors") {
  TripleStore base;
  base.vocab.add_entity("a");
  base.vocab.add_entity("b");
  base.vocab.add_relation("r");
  base.num_base_relations = 1;
  base.train = {{0, 0, 1}};
  const TripleStore aug = augment_reciprocal(base);
  RngState init(0);
  KgeModel model(distmult(2), 2, 2, init);
  CHECK_THROWS_AS(evaluate(model, aug.test, 1, FilterIndex(aug)), ParameterError);
  KgeModel unaugmented(distmult(2), 2, 1, init);
  CHECK_THROWS_AS(evaluate(unaugmented, base.train, 1, FilterIndex(aug)), ParameterError);
}

TEST_CASE("report json keys") {
  const std::vector<RankResult> one = {{2, 4}};
  const auto j = to_json(summarize(one));
  for (const char* key : {"mrr", "h1", "h3", "h10", "head", "tail", "num_triples"}) CHECK(j.contains(key));
}
