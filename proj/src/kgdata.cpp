#include "kge/kgdata.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "kge/errors.hpp"

namespace kge {

EntityId Vocabulary::add_entity(const std::string& name) {
  auto [it, inserted] = entity_ids_.try_emplace(name, static_cast<EntityId>(entity_names_.size()));
  if (inserted) entity_names_.push_back(name);
  return it->second;
}

RelationId Vocabulary::add_relation(const std::string& name) {
  auto [it, inserted] = relation_ids_.try_emplace(name, static_cast<RelationId>(relation_names_.size()));
  if (inserted) relation_names_.push_back(name);
  return it->second;
}

EntityId Vocabulary::entity_id(const std::string& name) const {
  auto it = entity_ids_.find(name);
  return it == entity_ids_.end() ? -1 : it->second;
}

RelationId Vocabulary::relation_id(const std::string& name) const {
  auto it = relation_ids_.find(name);
  return it == relation_ids_.end() ? -1 : it->second;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
    default:
      return "test";
  }
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

const std::vector<Triple>& TripleStore::split(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kValid:
      return valid;
    case Split::kTest:
    default:
      return test;
  }
}

namespace {

std::vector<Triple> read_split(const std::filesystem::path& file, Vocabulary& vocab) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<Triple> triples;
  std::set<Triple> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    const Triple t{vocab.add_entity(fields[0]), vocab.add_relation(fields[1]), vocab.add_entity(fields[2])};
    if (seen.insert(t).second) triples.push_back(t);
  }
  return triples;
}

}  // namespace

TripleStore load_dataset(const std::filesystem::path& directory) {
  for (const char* name : {"train.txt", "valid.txt", "test.txt"}) {
    if (!std::filesystem::exists(directory / name)) throw IoError("missing " + (directory / name).string());
  }
  TripleStore store;
  store.train = read_split(directory / "train.txt", store.vocab);
  store.valid = read_split(directory / "valid.txt", store.vocab);
  store.test = read_split(directory / "test.txt", store.vocab);
  store.num_base_relations = store.vocab.num_relations();
  return store;
}

void write_dataset(const TripleStore& store, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    const auto file = directory / (std::string(split_name(s)) + ".txt");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    for (const Triple& t : store.split(s)) {
      if (static_cast<std::size_t>(t.relation) >= store.num_base_relations) continue;
      out << store.vocab.entity_name(t.head) << '\t' << store.vocab.relation_name(t.relation) << '\t'
          << store.vocab.entity_name(t.tail) << '\n';
    }
    if (!out) throw IoError("write failed for " + file.string());
  }
}

TripleStore augment_reciprocal(const TripleStore& store) {
  if (store.augmented) throw UsageError("store is already augmented with reciprocal relations");
  TripleStore out = store;
  const auto offset = static_cast<RelationId>(store.num_base_relations);
  for (auto* split : {&out.train, &out.valid, &out.test}) {
    const std::size_t n = split->size();
    split->reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Triple t = (*split)[i];
      split->push_back({t.tail, t.relation + offset, t.head});
    }
  }
  out.augmented = true;
  return out;
}

FilterIndex::FilterIndex(const TripleStore& store) {
  for (const auto* split : {&store.train, &store.valid, &store.test})
    for (const Triple& t : *split) index_[key(t.head, t.relation)].push_back(t.tail);
  for (auto& [k, tails] : index_) {
    std::sort(tails.begin(), tails.end());
    tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
  }
}

std::span<const EntityId> FilterIndex::tails(EntityId head, RelationId relation) const {
  auto it = index_.find(key(head, relation));
  if (it == index_.end()) return {};
  return it->second;
}

FilterIndex build_filter_index(const TripleStore& store) { return FilterIndex(store); }

std::vector<EntityId> Batch::heads() const {
  std::vector<EntityId> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.head);
  return out;
}

std::vector<RelationId> Batch::relations() const {
  std::vector<RelationId> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.relation);
  return out;
}

Tensor Batch::targets(std::size_t num_entities) const {
  Tensor y({queries.size(), num_entities});
  for (std::size_t i = 0; i < positives.size(); ++i)
    for (EntityId t : positives[i]) y.at(i, static_cast<std::size_t>(t)) = 1.0;
  return y;
}

QueryTable::QueryTable(std::span<const Triple> train) {
  std::vector<Triple> sorted(train.begin(), train.end());
  std::sort(sorted.begin(), sorted.end());
  for (const Triple& t : sorted) {
    const Query q{t.head, t.relation};
    if (queries_.empty() || queries_.back() != q) {
      queries_.push_back(q);
      tails_.emplace_back();
    }
    if (tails_.back().empty() || tails_.back().back() != t.tail) tails_.back().push_back(t.tail);
  }
}

std::vector<Batch> make_batches(const QueryTable& table, std::size_t batch_size, RngState& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (batch_size > table.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the " + std::to_string(table.size()) +
                      " distinct training queries");
  }
  std::vector<std::size_t> order(table.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<Batch> batches(order.size() / batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Batch& batch = batches[b];
    batch.queries.reserve(batch_size);
    batch.positives.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t q = order[b * batch_size + i];
      batch.queries.push_back(table.queries()[q]);
      batch.positives.push_back(table.tails(q));
    }
  }
  return batches;
}

std::vector<Batch> make_batches(std::span<const Triple> train, std::size_t batch_size, RngState& rng) {
  return make_batches(QueryTable(train), batch_size, rng);
}

Tensor label_smooth(const Tensor& targets, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ParameterError("label smoothing must lie in [0, 1)");
  if (epsilon == 0.0) return targets;
  const double floor = epsilon / static_cast<double>(targets.cols());
  Tensor out = targets;
  for (double& v : out.storage()) v = (1.0 - epsilon) * v + floor;
  return out;
}

TripleStore make_synthetic(std::size_t num_entities, std::size_t num_relations, std::size_t pairs_per_relation,
                           std::uint64_t seed) {
  if (num_entities < 2 || num_relations < 1) throw ConfigError("synthetic graph needs two entities and one relation");
  const std::size_t max_pairs = num_entities * (num_entities - 1) / 2;
  if (pairs_per_relation + num_entities > max_pairs) throw ConfigError("too many pairs per relation for the entity count");

  RngState rng(seed);
  std::vector<std::set<std::pair<EntityId, EntityId>>> used(num_relations);
  std::vector<Triple> train, valid, test;
  auto emit = [](std::vector<Triple>& split, EntityId a, RelationId r, EntityId b) {
    split.push_back({a, r, b});
    split.push_back({b, r, a});
  };
  // A ring over all entities keeps every entity in the training split.
  for (std::size_t e = 0; e < num_entities; ++e) {
    const auto r = static_cast<RelationId>(e % num_relations);
    auto a = static_cast<EntityId>(e), b = static_cast<EntityId>((e + 1) % num_entities);
    if (a > b) std::swap(a, b);
    if (used[static_cast<std::size_t>(r)].insert({a, b}).second) emit(train, a, r, b);
  }
  for (std::size_t r = 0; r < num_relations; ++r) {
    std::size_t added = 0;
    while (added < pairs_per_relation) {
      auto a = static_cast<EntityId>(rng.below(num_entities));
      auto b = static_cast<EntityId>(rng.below(num_entities));
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (!used[r].insert({a, b}).second) continue;
      auto& split = (added % 10 == 8) ? valid : (added % 10 == 9) ? test : train;
      emit(split, a, static_cast<RelationId>(r), b);
      ++added;
    }
  }

  // Ids follow first appearance, exactly as load_dataset would assign them.
  TripleStore store;
  auto encode = [&store](const std::vector<Triple>& raw) {
    std::vector<Triple> out;
    out.reserve(raw.size());
    for (const Triple& t : raw) {
      out.push_back({store.vocab.add_entity("e" + std::to_string(t.head)),
                     store.vocab.add_relation("r" + std::to_string(t.relation)),
                     store.vocab.add_entity("e" + std::to_string(t.tail))});
    }
    return out;
  };
  store.train = encode(train);
  store.valid = encode(valid);
  store.test = encode(test);
  store.num_base_relations = store.vocab.num_relations();
  return store;
}

}  // namespace kge
