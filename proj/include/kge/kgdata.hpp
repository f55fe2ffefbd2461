#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kge/rng.hpp"
#include "kge/tensor.hpp"

namespace kge {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  bool operator==(const Triple&) const = default;
  auto operator<=>(const Triple&) const = default;
};

// Bijective name <-> id maps with dense ids assigned in first-seen order.
class Vocabulary {
 public:
  EntityId add_entity(const std::string& name);
  RelationId add_relation(const std::string& name);

  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const { return relation_names_; }
  const std::string& entity_name(EntityId id) const { return entity_names_.at(static_cast<std::size_t>(id)); }
  const std::string& relation_name(RelationId id) const { return relation_names_.at(static_cast<std::size_t>(id)); }
  // -1 when absent.
  EntityId entity_id(const std::string& name) const;
  RelationId relation_id(const std::string& name) const;

  bool operator==(const Vocabulary& other) const {
    return entity_names_ == other.entity_names_ && relation_names_ == other.relation_names_;
  }

 private:
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
};

enum class Split { kTrain, kValid, kTest };
const char* split_name(Split split);
// Throws ConfigError on anything other than train/valid/test.
Split parse_split(const std::string& name);

struct TripleStore {
  Vocabulary vocab;
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  // Relation count before reciprocal augmentation. Reciprocal relation ids
  // are r + num_base_relations.
  std::size_t num_base_relations = 0;
  bool augmented = false;

  std::size_t num_entities() const { return vocab.num_entities(); }
  // Relation id space used by models: doubled after augmentation.
  std::size_t num_relations() const { return augmented ? 2 * num_base_relations : num_base_relations; }
  const std::vector<Triple>& split(Split s) const;
};

// Reads train.txt / valid.txt / test.txt (head TAB relation TAB tail).
// Duplicate lines within a split are kept once.
TripleStore load_dataset(const std::filesystem::path& directory);
// Writes the three files back using vocabulary names. Only base triples
// (relation < num_base_relations) are written.
void write_dataset(const TripleStore& store, const std::filesystem::path& directory);

// For every (h, r, t) in every split adds (t, r + N_r, h).
TripleStore augment_reciprocal(const TripleStore& store);

// (h, r) -> sorted tails observed in train, valid and test.
class FilterIndex {
 public:
  FilterIndex() = default;
  explicit FilterIndex(const TripleStore& store);

  std::span<const EntityId> tails(EntityId head, RelationId relation) const;
  std::size_t size() const { return index_.size(); }

 private:
  static std::uint64_t key(EntityId head, RelationId relation) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(head)) << 32) | static_cast<std::uint32_t>(relation);
  }
  std::unordered_map<std::uint64_t, std::vector<EntityId>> index_;
};

FilterIndex build_filter_index(const TripleStore& store);

struct Query {
  EntityId head = 0;
  RelationId relation = 0;
  bool operator==(const Query&) const = default;
  auto operator<=>(const Query&) const = default;
};

// A 1-N training batch: distinct (h, r) queries and, per query, every
// training tail. targets() materializes the multi-label matrix Y.
struct Batch {
  std::vector<Query> queries;
  std::vector<std::vector<EntityId>> positives;

  std::size_t size() const { return queries.size(); }
  std::vector<EntityId> heads() const;
  std::vector<RelationId> relations() const;
  Tensor targets(std::size_t num_entities) const;
};

// Distinct training queries with their tails, in canonical (h, r) order.
class QueryTable {
 public:
  explicit QueryTable(std::span<const Triple> train);
  std::size_t size() const { return queries_.size(); }
  const std::vector<Query>& queries() const { return queries_; }
  const std::vector<EntityId>& tails(std::size_t i) const { return tails_[i]; }

 private:
  std::vector<Query> queries_;
  std::vector<std::vector<EntityId>> tails_;
};

// Shuffles the distinct queries with rng and groups them into batches of
// exactly batch_size; the final partial group is dropped. Throws ConfigError
// when batch_size is zero or exceeds the number of distinct queries.
std::vector<Batch> make_batches(const QueryTable& table, std::size_t batch_size, RngState& rng);
std::vector<Batch> make_batches(std::span<const Triple> train, std::size_t batch_size, RngState& rng);

// Y' = (1 - eps) Y + eps / N_e
Tensor label_smooth(const Tensor& targets, double epsilon);

// Deterministic toy graph: each relation gets `pairs_per_relation` random
// entity pairs, stored in both directions, split roughly 80/10/10 by pair.
TripleStore make_synthetic(std::size_t num_entities, std::size_t num_relations, std::size_t pairs_per_relation,
                           std::uint64_t seed);

}  // namespace kge
