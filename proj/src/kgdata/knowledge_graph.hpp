#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "common/error.hpp"

namespace kglp::kg {

using Id = std::int64_t;

struct Triple {
  Id head = 0;
  Id relation = 0;
  Id tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// A triple as written in a dataset file.
struct RawTriple {
  std::string head;
  std::string relation;
  std::string tail;
};

/// Bijective string <-> id table; ids follow first appearance.
class Vocab {
 public:
  Id add(const std::string& name);
  std::optional<Id> find(const std::string& name) const;
  Id at(const std::string& name) const;
  const std::string& name(Id id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Id> ids_;
};

/// Known answers per (head, relation) query.
class FilterIndex {
 public:
  void add(const Triple& t);
  // Sorts and deduplicates every answer list; call once after all adds.
  void finalize();
  std::span<const Id> answers(Id head, Id relation) const;
  bool contains(Id head, Id relation, Id tail) const;
  std::size_t num_queries() const { return index_.size(); }

 private:
  static std::uint64_t key(Id head, Id relation) {
    return (static_cast<std::uint64_t>(head) << 32) | static_cast<std::uint64_t>(relation);
  }
  std::unordered_map<std::uint64_t, std::vector<Id>> index_;
};

enum class Split { train, valid, test };
const char* split_name(Split split);

inline const std::string kUnkRelation = "__UNK__";
inline const std::string kInverseSuffix = "_inv";

/// Vocabularies, the three splits, and the filtered-evaluation index.
///
/// After augment_inverse() the relation ids are laid out as
/// [0, B) base, [B, 2B) inverses (r + B), 2B the reserved UNK id.
struct KnowledgeGraph {
  Vocab entities;
  Vocab relations;
  std::vector<Triple> train, valid, test;
  FilterIndex filter;        // over train, valid and test
  FilterIndex train_filter;  // train only: 1-N training labels
  std::size_t base_relations = 0;
  bool augmented = false;
  std::size_t duplicates_dropped[3] = {0, 0, 0};
  std::size_t withheld_lines = 0;

  const std::vector<Triple>& split(Split s) const;
  std::vector<Triple>& split(Split s);

  std::size_t num_entities() const { return entities.size(); }
  /// Relation classes: base + inverse, excluding UNK.
  std::size_t num_classes() const { return augmented ? 2 * base_relations : base_relations; }
  Id unk() const;
  bool is_inverse(Id r) const { return augmented && r >= static_cast<Id>(base_relations) && r < static_cast<Id>(2 * base_relations); }
  Id base_of(Id r) const { return is_inverse(r) ? r - static_cast<Id>(base_relations) : r; }
  Id inverse_of(Id r) const;
  /// Name without the inverse suffix.
  const std::string& base_name(Id r) const { return relations.name(base_of(r)); }
  std::uint64_t entity_hash() const;
  std::uint64_t relation_hash() const;
};

struct LoadOptions {
  // Relation names dropped from every split at load time.
  std::set<std::string> withhold_relations;
};

/// Parses `head<TAB>relation<TAB>tail` lines (LF or CRLF). Throws DataError
/// naming the file and line on malformed input.
std::vector<RawTriple> read_triples(const std::filesystem::path& path);
std::vector<RawTriple> parse_triples(const std::string& text, const std::string& origin = "<memory>");

KnowledgeGraph load_dataset(const std::filesystem::path& train, const std::filesystem::path& valid,
                            const std::filesystem::path& test, const LoadOptions& options = {});
KnowledgeGraph build_graph(const std::vector<RawTriple>& train, const std::vector<RawTriple>& valid,
                           const std::vector<RawTriple>& test, const LoadOptions& options = {});

/// Adds r_inv for every base relation and (t, r_inv, h) for every (h, r, t),
/// plus the UNK relation id. Throws ContractError if already augmented.
KnowledgeGraph augment_inverse(KnowledgeGraph kg);

struct RelationGroups {
  std::set<Id> many_shot;
  std::set<Id> few_shot;
  std::vector<std::size_t> train_frequency;  // per base relation

  bool is_many(Id base_relation) const { return many_shot.contains(base_relation); }
};

/// Ranks base relations by train frequency (ties by ascending id) and puts
/// the first ceil(many_fraction * B) into the many-shot group.
RelationGroups frequency_split(const KnowledgeGraph& kg, double many_fraction = 0.2);

/// Triples whose relation never occurs in training, mapped onto the UNK id.
struct ZeroShotSplit {
  std::vector<Triple> triples;             // relation == kg.unk()
  std::vector<std::string> relation_names;  // original relation per triple
};

/// Draws `n` qualifying triples (every one when n == 0) in a seed-fixed order.
ZeroShotSplit make_zero_shot_split(const KnowledgeGraph& kg, const std::vector<RawTriple>& extended, std::size_t n,
                                   std::uint64_t seed);
void write_zero_shot_table(const std::filesystem::path& path, const KnowledgeGraph& kg, const ZeroShotSplit& split);
/// Reads a side table written by write_zero_shot_table back against `kg`.
ZeroShotSplit read_zero_shot_table(const std::filesystem::path& path, const KnowledgeGraph& kg);

/// Seed-deterministic epoch shuffling into fixed-size batches; the last
/// partial batch is kept.
class Batcher {
 public:
  Batcher(std::vector<Triple> triples, std::size_t batch_size, std::uint64_t seed);

  /// Batches for one epoch; spans stay valid until the next call.
  std::vector<std::span<const Triple>> epoch(std::uint64_t index);
  std::size_t batches_per_epoch() const { return (triples_.size() + batch_size_ - 1) / batch_size_; }

 private:
  std::vector<Triple> triples_;
  std::vector<Triple> order_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace kglp::kg
