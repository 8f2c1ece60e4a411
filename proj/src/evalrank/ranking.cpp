#include "evalrank/ranking.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

#include "json.hpp"
#include "numcore/tensor.hpp"

namespace kglp::eval {

double rank_entity(std::span<const double> scores, kg::Id gold, std::span<const kg::Id> known) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= scores.size()) {
    throw ContractError("rank_entity: gold id " + std::to_string(gold) + " outside [0, " +
                        std::to_string(scores.size()) + ")");
  }
  const double g = scores[static_cast<std::size_t>(gold)];
  if (!std::isfinite(g)) throw TrainingError("rank_entity: non-finite score for the gold entity");
  std::vector<char> excluded(scores.size(), 0);
  for (kg::Id k : known) {
    if (k >= 0 && static_cast<std::size_t>(k) < scores.size()) excluded[static_cast<std::size_t>(k)] = 1;
  }
  excluded[static_cast<std::size_t>(gold)] = 1;
  std::size_t greater = 0, equal = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (excluded[e]) continue;
    // NaN competitors count against the gold entity.
    if (scores[e] > g || std::isnan(scores[e])) {
      ++greater;
    } else if (scores[e] == g) {
      ++equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

Metrics metrics_from_ranks(std::span<const double> ranks) {
  Metrics m;
  m.queries = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.h1 += r <= 1.0;
    m.h5 += r <= 5.0;
    m.h10 += r <= 10.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.h1 /= n;
  m.h5 /= n;
  m.h10 /= n;
  return m;
}

RankingReport evaluate_split(const QueryScorer& scorer, const kg::KnowledgeGraph& kg, kg::Split split,
                             const kg::RelationGroups& groups, std::size_t batch_size) {
  if (!kg.augmented) throw ContractError("evaluate_split: the graph must carry inverse relations");
  if (batch_size == 0) throw ContractError("evaluate_split: batch_size must be >= 1");
  const auto& triples = kg.split(split);
  if (triples.empty()) throw DataError(std::string("evaluate_split: ") + kg::split_name(split) + " split is empty");

  RankingReport report;
  report.per_query.reserve(triples.size());
  const std::size_t ne = kg.num_entities();
  for (std::size_t start = 0; start < triples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, triples.size() - start);
    std::vector<kg::Id> heads(n), rels(n);
    for (std::size_t i = 0; i < n; ++i) {
      heads[i] = triples[start + i].head;
      rels[i] = triples[start + i].relation;
    }
    const num::Tensor logits = scorer(heads, rels);
    if (logits.shape() != num::Shape{n, ne}) {
      throw ContractError("evaluate_split: scorer returned " + num::shape_str(logits.shape()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = triples[start + i];
      const double r = rank_entity(logits.data().subspan(i * ne, ne), t.tail, kg.filter.answers(t.head, t.relation));
      report.per_query.push_back(QueryRecord{t.head, t.relation, t.tail, r});
    }
  }

  std::vector<double> all, many, few;
  for (const auto& q : report.per_query) {
    all.push_back(q.rank);
    (groups.is_many(kg.base_of(q.relation)) ? many : few).push_back(q.rank);
  }
  report.all = metrics_from_ranks(all);
  report.many = metrics_from_ranks(many);
  report.few = metrics_from_ranks(few);
  return report;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

std::span<const double> row(const scorer::ParameterStore& s, kg::Id r) {
  return s.relation.data().subspan(static_cast<std::size_t>(r) * s.dim, s.dim);
}

}  // namespace

double mean_pairwise_similarity(const scorer::ParameterStore& transe, std::span<const kg::Id> rows) {
  if (rows.size() < 2) throw ContractError("mean_pairwise_similarity: need at least two relations");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      total += cosine(row(transe, rows[i]), row(transe, rows[j]));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

ZeroShotReport zero_shot_report(const std::string& mode, std::span<const double> logits,
                                std::span<const double> baseline_logits, std::span<const std::string> predicted,
                                std::span<const std::string> truth, const scorer::ParameterStore& transe,
                                const kg::Vocab& transe_relations) {
  if (logits.empty()) throw DataError("zero_shot_report: 0 qualifying triples");
  if (baseline_logits.size() != logits.size() || predicted.size() != logits.size() || truth.size() != logits.size()) {
    throw ContractError("zero_shot_report: per-triple inputs differ in length");
  }
  auto sigmoid = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  ZeroShotReport out;
  out.mode = mode;
  out.triples = logits.size();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.mean_score += sigmoid(logits[i]);
    out.baseline_score += sigmoid(baseline_logits[i]);
  }
  out.mean_score /= static_cast<double>(logits.size());
  out.baseline_score /= static_cast<double>(logits.size());

  double sim = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto p = transe_relations.find(predicted[i]);
    const auto t = transe_relations.find(truth[i]);
    if (!p || !t) {
      ++out.skipped;
      continue;
    }
    sim += cosine(row(transe, *p), row(transe, *t));
    ++out.similarity_pairs;
  }
  if (out.similarity_pairs > 0) out.mean_similarity = sim / static_cast<double>(out.similarity_pairs);

  std::vector<kg::Id> base;
  for (kg::Id r = 0; r < static_cast<kg::Id>(transe_relations.size()); ++r) {
    const auto& name = transe_relations.name(r);
    const bool inverse = name.size() > kg::kInverseSuffix.size() &&
                         name.compare(name.size() - kg::kInverseSuffix.size(), std::string::npos, kg::kInverseSuffix) == 0;
    if (!inverse && name != kg::kUnkRelation) base.push_back(r);
  }
  if (base.size() >= 2) out.random_pair_similarity = mean_pairwise_similarity(transe, base);
  return out;
}

namespace {

nlohmann::ordered_json metrics_json(const Metrics& m) {
  return {{"mrr", m.mrr}, {"h1", m.h1}, {"h5", m.h5}, {"h10", m.h10}, {"queries", m.queries}};
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string report_json(const RankingReport& report, const kg::KnowledgeGraph& kg, bool include_per_query) {
  nlohmann::ordered_json doc;
  if (report.all.queries > 0) {
    doc["metrics"] = metrics_json(report.all);
    doc["groups"] = {{"many", metrics_json(report.many)},
                     {"few", metrics_json(report.few)},
                     {"all", metrics_json(report.all)}};
  }
  if (!report.zero_shot.empty()) {
    nlohmann::ordered_json zs = nlohmann::ordered_json::object();
    for (const auto& z : report.zero_shot) {
      zs[z.mode] = {{"mean_score", z.mean_score},
                    {"baseline_score", z.baseline_score},
                    {"mean_similarity", z.mean_similarity},
                    {"random_pair_similarity", z.random_pair_similarity},
                    {"triples", z.triples},
                    {"similarity_pairs", z.similarity_pairs},
                    {"skipped", z.skipped}};
    }
    doc["zero_shot"] = zs;
  }
  if (include_per_query) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& q : report.per_query) {
      rows.push_back({{"head", kg.entities.name(q.head)},
                      {"relation", kg.relations.name(q.relation)},
                      {"gold", kg.entities.name(q.gold)},
                      {"rank", q.rank}});
    }
    doc["per_query"] = rows;
  }
  doc["created"] = utc_now();
  return doc.dump(2) + "\n";
}

}  // namespace kglp::eval
