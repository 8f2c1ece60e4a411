#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgdata/knowledge_graph.hpp"
#include "numcore/tensor.hpp"
#include "scorers/scorers.hpp"

namespace kglp::eval {

/// Filtered rank of `gold` under the mean-rank tie rule. `known` lists every
/// correct answer for the query (gold may be among them); those other than
/// gold are removed from the competition.
double rank_entity(std::span<const double> scores, kg::Id gold, std::span<const kg::Id> known);

struct Metrics {
  double mrr = 0.0;
  double h1 = 0.0;
  double h5 = 0.0;
  double h10 = 0.0;
  std::size_t queries = 0;
};

Metrics metrics_from_ranks(std::span<const double> ranks);

struct QueryRecord {
  kg::Id head = 0;
  kg::Id relation = 0;
  kg::Id gold = 0;
  double rank = 0.0;
};

struct ZeroShotReport {
  std::string mode;
  double mean_score = 0.0;       // mean sigmoid score with the substituted vector
  double baseline_score = 0.0;   // same triples scored with the untrained UNK row
  double mean_similarity = 0.0;  // cosine(TransE(r_ms), TransE(true relation))
  double random_pair_similarity = 0.0;
  std::size_t triples = 0;
  std::size_t similarity_pairs = 0;
  std::size_t skipped = 0;  // true relation absent from the TransE vocabulary
};

struct RankingReport {
  Metrics all;
  Metrics many;
  Metrics few;
  std::vector<QueryRecord> per_query;
  std::vector<ZeroShotReport> zero_shot;
};

/// Logits [n, |E|] for tail queries (heads[i], relations[i], ?).
using QueryScorer = std::function<num::Tensor(std::span<const kg::Id> heads, std::span<const kg::Id> relations)>;

/// Ranks every triple of an augmented split as a tail query; the inverse
/// copies make these the head queries of the original triples. Group metrics
/// follow the base relation.
RankingReport evaluate_split(const QueryScorer& scorer, const kg::KnowledgeGraph& kg, kg::Split split,
                             const kg::RelationGroups& groups, std::size_t batch_size = 256);

double cosine(std::span<const double> a, std::span<const double> b);

/// Mean cosine over all unordered pairs of distinct rows in `rows`.
double mean_pairwise_similarity(const scorer::ParameterStore& transe, std::span<const kg::Id> rows);

/// Assembles the zero-shot report from per-triple logits and predictions.
/// `predicted` and `truth` are relation names looked up in `transe_relations`.
ZeroShotReport zero_shot_report(const std::string& mode, std::span<const double> logits,
                                std::span<const double> baseline_logits, std::span<const std::string> predicted,
                                std::span<const std::string> truth, const scorer::ParameterStore& transe,
                                const kg::Vocab& transe_relations);

/// {metrics, groups, zero_shot, per_query?, created}. `created` is the only
/// field that varies between identical evaluations.
std::string report_json(const RankingReport& report, const kg::KnowledgeGraph& kg, bool include_per_query);

}  // namespace kglp::eval
