#include "kgdata/knowledge_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "numcore/rng.hpp"

namespace kglp::kg {

Id Vocab::add(const std::string& name) {
  auto [it, inserted] = ids_.try_emplace(name, static_cast<Id>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<Id> Vocab::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Id Vocab::at(const std::string& name) const {
  auto id = find(name);
  if (!id) throw DataError("unknown name '" + name + "'");
  return *id;
}

void FilterIndex::add(const Triple& t) { index_[key(t.head, t.relation)].push_back(t.tail); }

void FilterIndex::finalize() {
  for (auto& [k, tails] : index_) {
    std::sort(tails.begin(), tails.end());
    tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
  }
}

std::span<const Id> FilterIndex::answers(Id head, Id relation) const {
  auto it = index_.find(key(head, relation));
  if (it == index_.end()) return {};
  return it->second;
}

bool FilterIndex::contains(Id head, Id relation, Id tail) const {
  auto a = answers(head, relation);
  return std::binary_search(a.begin(), a.end(), tail);
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

const std::vector<Triple>& KnowledgeGraph::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::valid: return valid;
    case Split::test: return test;
  }
  return train;
}

std::vector<Triple>& KnowledgeGraph::split(Split s) {
  return const_cast<std::vector<Triple>&>(std::as_const(*this).split(s));
}

Id KnowledgeGraph::unk() const {
  if (!augmented) throw ContractError("knowledge graph: UNK relation exists only after augment_inverse");
  return static_cast<Id>(2 * base_relations);
}

Id KnowledgeGraph::inverse_of(Id r) const {
  if (!augmented) throw ContractError("knowledge graph: inverse relations exist only after augment_inverse");
  const Id b = static_cast<Id>(base_relations);
  if (r < 0 || r >= 2 * b) throw ContractError("knowledge graph: relation " + std::to_string(r) + " has no inverse");
  return r < b ? r + b : r - b;
}

namespace {

std::uint64_t fnv1a(const std::vector<std::string>& names) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& n : names) {
    for (unsigned char c : n) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  return h;
}

void rebuild_filters(KnowledgeGraph& kg) {
  kg.filter = FilterIndex{};
  kg.train_filter = FilterIndex{};
  for (auto s : {Split::train, Split::valid, Split::test}) {
    for (const auto& t : kg.split(s)) {
      kg.filter.add(t);
      if (s == Split::train) kg.train_filter.add(t);
    }
  }
  kg.filter.finalize();
  kg.train_filter.finalize();
}

}  // namespace

std::uint64_t KnowledgeGraph::entity_hash() const { return fnv1a(entities.names()); }
std::uint64_t KnowledgeGraph::relation_hash() const { return fnv1a(relations.names()); }

std::vector<RawTriple> parse_triples(const std::string& text, const std::string& origin) {
  std::vector<RawTriple> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected head<TAB>relation<TAB>tail, got " +
                      std::to_string(fields.size()) + " field(s)");
    }
    out.push_back(RawTriple{std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

std::vector<RawTriple> read_triples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open triple file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_triples(buf.str(), path.string());
}

KnowledgeGraph build_graph(const std::vector<RawTriple>& train, const std::vector<RawTriple>& valid,
                           const std::vector<RawTriple>& test, const LoadOptions& options) {
  KnowledgeGraph kg;
  const std::vector<RawTriple>* raw[3] = {&train, &valid, &test};
  const Split splits[3] = {Split::train, Split::valid, Split::test};
  for (int s = 0; s < 3; ++s) {
    std::set<Triple> seen;
    auto& dest = kg.split(splits[s]);
    for (const auto& r : *raw[s]) {
      if (options.withhold_relations.contains(r.relation)) {
        ++kg.withheld_lines;
        continue;
      }
      Triple t{kg.entities.add(r.head), kg.relations.add(r.relation), kg.entities.add(r.tail)};
      if (!seen.insert(t).second) {
        ++kg.duplicates_dropped[s];
        continue;
      }
      dest.push_back(t);
    }
  }
  if (kg.train.empty()) throw DataError("training split is empty");
  kg.base_relations = kg.relations.size();
  rebuild_filters(kg);
  return kg;
}

KnowledgeGraph load_dataset(const std::filesystem::path& train, const std::filesystem::path& valid,
                            const std::filesystem::path& test, const LoadOptions& options) {
  return build_graph(read_triples(train), read_triples(valid), read_triples(test), options);
}

KnowledgeGraph augment_inverse(KnowledgeGraph kg) {
  if (kg.augmented) throw ContractError("augment_inverse: knowledge graph is already augmented");
  const std::size_t b = kg.base_relations;
  for (std::size_t r = 0; r < b; ++r) {
    const std::string name = kg.relations.name(static_cast<Id>(r)) + kInverseSuffix;
    if (kg.relations.find(name)) throw DataError("augment_inverse: relation name '" + name + "' already exists");
    kg.relations.add(name);
  }
  if (kg.relations.find(kUnkRelation)) throw DataError("augment_inverse: reserved name " + kUnkRelation + " in data");
  kg.relations.add(kUnkRelation);
  for (auto s : {Split::train, Split::valid, Split::test}) {
    auto& triples = kg.split(s);
    const std::size_t n = triples.size();
    triples.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Triple t = triples[i];
      triples.push_back(Triple{t.tail, t.relation + static_cast<Id>(b), t.head});
    }
  }
  kg.augmented = true;
  rebuild_filters(kg);
  return kg;
}

RelationGroups frequency_split(const KnowledgeGraph& kg, double many_fraction) {
  if (kg.train.empty()) throw ContractError("frequency_split: empty training split");
  if (many_fraction < 0.0 || many_fraction > 1.0) throw ContractError("frequency_split: fraction outside [0, 1]");
  const std::size_t b = kg.base_relations;
  RelationGroups groups;
  groups.train_frequency.assign(b, 0);
  for (const auto& t : kg.train) {
    if (!kg.is_inverse(t.relation)) ++groups.train_frequency[static_cast<std::size_t>(t.relation)];
  }
  std::vector<Id> order(b);
  std::iota(order.begin(), order.end(), Id{0});
  std::stable_sort(order.begin(), order.end(), [&](Id x, Id y) {
    return groups.train_frequency[static_cast<std::size_t>(x)] > groups.train_frequency[static_cast<std::size_t>(y)];
  });
  // Guard against 0.2 * 25 landing a hair above 5.
  const auto many = static_cast<std::size_t>(std::ceil(many_fraction * static_cast<double>(b) - 1e-9));
  for (std::size_t i = 0; i < b; ++i) {
    (i < many ? groups.many_shot : groups.few_shot).insert(order[i]);
  }
  return groups;
}

ZeroShotSplit make_zero_shot_split(const KnowledgeGraph& kg, const std::vector<RawTriple>& extended, std::size_t n,
                                   std::uint64_t seed) {
  const Id unk = kg.unk();
  std::vector<bool> trained(kg.relations.size(), false);
  for (const auto& t : kg.train) trained[static_cast<std::size_t>(kg.base_of(t.relation))] = true;

  std::vector<const RawTriple*> qualifying;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : extended) {
    const auto rel = kg.relations.find(r.relation);
    if (rel && trained[static_cast<std::size_t>(kg.base_of(*rel))]) continue;
    if (r.relation == kUnkRelation) continue;
    if (!kg.entities.find(r.head) || !kg.entities.find(r.tail)) continue;
    if (!seen.emplace(r.head, r.relation, r.tail).second) continue;
    qualifying.push_back(&r);
  }
  if (n == 0) n = qualifying.size();
  if (qualifying.size() < n || qualifying.empty()) {
    throw DataError("make_zero_shot_split: " + std::to_string(qualifying.size()) + " qualifying triples, need " +
                    std::to_string(n));
  }
  num::Rng rng(seed);
  num::shuffle(qualifying, rng);
  ZeroShotSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const RawTriple& r = *qualifying[i];
    out.triples.push_back(Triple{kg.entities.at(r.head), unk, kg.entities.at(r.tail)});
    out.relation_names.push_back(r.relation);
  }
  return out;
}

void write_zero_shot_table(const std::filesystem::path& path, const KnowledgeGraph& kg, const ZeroShotSplit& split) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    for (std::size_t i = 0; i < split.triples.size(); ++i) {
      out << kg.entities.name(split.triples[i].head) << '\t' << split.relation_names[i] << '\t'
          << kg.entities.name(split.triples[i].tail) << '\n';
    }
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ZeroShotSplit read_zero_shot_table(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  ZeroShotSplit out;
  for (const auto& r : read_triples(path)) {
    const auto h = kg.entities.find(r.head);
    const auto t = kg.entities.find(r.tail);
    if (!h || !t) throw DataError(path.string() + ": entity outside the training vocabulary in zero-shot table");
    out.triples.push_back(Triple{*h, kg.unk(), *t});
    out.relation_names.push_back(r.relation);
  }
  if (out.triples.empty()) throw DataError(path.string() + ": 0 qualifying triples");
  return out;
}

Batcher::Batcher(std::vector<Triple> triples, std::size_t batch_size, std::uint64_t seed)
    : triples_(std::move(triples)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ == 0) throw ContractError("batches: batch_size must be >= 1");
}

std::vector<std::span<const Triple>> Batcher::epoch(std::uint64_t index) {
  order_ = triples_;
  num::Rng rng(num::splitmix64(seed_ + num::splitmix64(index)));
  num::shuffle(order_, rng);
  std::vector<std::span<const Triple>> out;
  for (std::size_t start = 0; start < order_.size(); start += batch_size_) {
    out.emplace_back(order_.data() + start, std::min(batch_size_, order_.size() - start));
  }
  return out;
}

}  // namespace kglp::kg
