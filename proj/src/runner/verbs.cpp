#include "runner/verbs.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "json.hpp"

namespace kglp::run {

using nlohmann::ordered_json;
using num::Tensor;

namespace {

void require_path(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("missing required setting '") + key + "'");
}

void emit(const LogSink& log, const ordered_json& j) {
  if (log) log(j.dump());
}

ordered_json metrics_json(const eval::Metrics& m) {
  return {{"mrr", m.mrr}, {"h1", m.h1}, {"h5", m.h5}, {"h10", m.h10}, {"queries", m.queries}};
}

std::string shortest(float v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("float formatting failed");
  return std::string(buf, end);
}

std::string rows_text(const std::vector<std::string>& names, const Tensor& table) {
  std::string out;
  const std::size_t dim = table.dim(1);
  const auto data = table.data();
  for (std::size_t r = 0; r < names.size(); ++r) {
    out += names[r];
    for (std::size_t c = 0; c < dim; ++c) {
      out += '\t';
      out += shortest(static_cast<float>(data[r * dim + c]));
    }
    out += '\n';
  }
  return out;
}

void check_kind(const CheckpointHeader& h, const RunConfig& cfg, const std::filesystem::path& path) {
  if (h.kind != scorer::model_name(cfg.model)) {
    throw ConfigError("checkpoint " + path.string() + " holds a " + h.kind + " model, config says " +
                      scorer::model_name(cfg.model));
  }
  if (h.grl != cfg.grl) {
    throw ConfigError("checkpoint " + path.string() + (h.grl ? " has" : " lacks") + " a GRL head, config grl = " +
                      (cfg.grl ? "true" : "false"));
  }
}

kg::Vocab vocab_of(const std::vector<std::string>& names) {
  kg::Vocab v;
  for (const auto& n : names) v.add(n);
  return v;
}

}  // namespace

kg::KnowledgeGraph load_graph(const RunConfig& cfg) {
  require_path(cfg.train_path, "train");
  require_path(cfg.valid_path, "valid");
  require_path(cfg.test_path, "test");
  kg::LoadOptions opt;
  opt.withhold_relations = cfg.withhold_relations;
  return kg::augment_inverse(kg::load_dataset(cfg.train_path, cfg.valid_path, cfg.test_path, opt));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << text;
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string run_train(const RunConfig& cfg, const LogSink& log) {
  const auto kg = load_graph(cfg);
  emit(log, {{"event", "data"},
             {"entities", kg.num_entities()},
             {"relation_classes", kg.num_classes()},
             {"train", kg.train.size()},
             {"valid", kg.valid.size()},
             {"test", kg.test.size()}});
  auto model = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  const auto result = train_model(model, kg, cfg, log);
  if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, model, kg, cfg);
  if (model.head && !cfg.attention_path.empty()) {
    const std::size_t n = std::min(cfg.attention_samples, kg.test.size());
    grl::write_attention(cfg.attention_path.string(), *model.head, model.store, kg,
                         std::span<const kg::Triple>(kg.test.data(), n));
  }
  ordered_json summary = {{"event", "train_done"},
                          {"best_val_mrr", result.best_val_mrr},
                          {"best_epoch", result.best_epoch},
                          {"epochs_run", result.epochs_run},
                          {"early_stopped", result.early_stopped},
                          {"checkpoint", cfg.checkpoint.string()}};
  emit(log, summary);
  return summary.dump();
}

eval::RankingReport evaluate_checkpoint(Checkpoint& ck, const kg::KnowledgeGraph& kg, const RunConfig& cfg) {
  check_vocabulary(ck.header, kg);
  const auto groups = kg::frequency_split(kg, cfg.many_fraction);
  return eval::evaluate_split(ck.model.query_scorer(), kg, kg::Split::test, groups, cfg.eval_batch_size);
}

std::string run_eval(const RunConfig& cfg, const LogSink& log) {
  require_path(cfg.checkpoint, "checkpoint");
  auto ck = load_checkpoint(cfg.checkpoint);
  check_kind(ck.header, cfg, cfg.checkpoint);
  const auto kg = load_graph(cfg);
  const auto report = evaluate_checkpoint(ck, kg, cfg);
  if (!cfg.report.empty()) write_file_atomic(cfg.report, eval::report_json(report, kg, cfg.per_query));
  for (const auto& [name, m] : {std::pair{"all", report.all}, {"many", report.many}, {"few", report.few}}) {
    ordered_json line = {{"event", "metrics"}, {"group", name}};
    line.update(metrics_json(m));
    emit(log, line);
  }
  ordered_json summary = {{"event", "eval_done"}, {"report", cfg.report.string()}};
  summary.update(metrics_json(report.all));
  return summary.dump();
}

eval::RankingReport zero_shot_probe(LinkModel& model, const kg::KnowledgeGraph& kg, const kg::ZeroShotSplit& split,
                                    const Checkpoint& transe, const RunConfig& cfg) {
  if (!model.head) throw ConfigError("zero-shot needs a model trained with grl = true");
  if (split.triples.empty()) throw DataError("zero-shot: 0 qualifying triples");
  std::vector<kg::Id> heads, tails;
  for (const auto& t : split.triples) {
    heads.push_back(t.head);
    tails.push_back(t.tail);
  }
  const std::size_t n = heads.size();
  const std::vector<kg::Id> unk(n, kg.unk());

  num::NoGradGuard guard;
  const Tensor eh = scorer::entity_rows(model.store, heads);
  const Tensor et = scorer::entity_rows(model.store, tails);
  auto gold_logits = [&](const Tensor& all) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = all.at(i, static_cast<std::size_t>(tails[i]));
    return out;
  };
  const auto baseline = gold_logits(model.score_with(heads, scorer::relation_rows(model.store, unk)));

  // The nearest trained relation is the prediction for both modes.
  std::vector<std::string> predicted;
  for (kg::Id r : model.head->most_similar_relation(eh, et, model.store.relation)) predicted.push_back(kg.base_name(r));

  const auto transe_vocab = vocab_of(transe.header.relations);
  eval::RankingReport report;
  for (const auto mode : cfg.zero_shot_modes) {
    const Tensor rel = model.head->zero_shot_relation_embedding(eh, et, model.store.relation, mode);
    const auto logits = gold_logits(model.score_with(heads, rel));
    report.zero_shot.push_back(eval::zero_shot_report(grl::zero_shot_mode_name(mode), logits, baseline, predicted,
                                                      split.relation_names, transe.model.store, transe_vocab));
  }
  return report;
}

std::string run_zero_shot(const RunConfig& cfg, const LogSink& log) {
  require_path(cfg.checkpoint, "checkpoint");
  require_path(cfg.transe_checkpoint, "transe_checkpoint");
  auto ck = load_checkpoint(cfg.checkpoint);
  check_kind(ck.header, cfg, cfg.checkpoint);
  const auto transe = load_checkpoint(cfg.transe_checkpoint);
  if (transe.header.kind != "transe") {
    throw ConfigError("transe_checkpoint " + cfg.transe_checkpoint.string() + " holds a " + transe.header.kind +
                      " model");
  }
  const auto kg = load_graph(cfg);
  check_vocabulary(ck.header, kg);

  kg::ZeroShotSplit split;
  if (!cfg.zero_shot_table.empty() && std::filesystem::exists(cfg.zero_shot_table)) {
    split = kg::read_zero_shot_table(cfg.zero_shot_table, kg);
  } else {
    const auto source = cfg.zero_shot_source.empty() ? cfg.test_path : cfg.zero_shot_source;
    split = kg::make_zero_shot_split(kg, kg::read_triples(source), cfg.zero_shot_count,
                                     num::derive_seed(cfg.seed, num::Stream::zero_shot));
    if (!cfg.zero_shot_table.empty()) kg::write_zero_shot_table(cfg.zero_shot_table, kg, split);
  }
  const auto report = zero_shot_probe(ck.model, kg, split, transe, cfg);
  if (!cfg.report.empty()) write_file_atomic(cfg.report, eval::report_json(report, kg, false));

  ordered_json summary = {{"event", "zeroshot_done"}, {"report", cfg.report.string()}, {"triples", split.triples.size()}};
  ordered_json modes = ordered_json::object();
  for (const auto& z : report.zero_shot) {
    ordered_json line = {{"event", "zero_shot"},
                         {"mode", z.mode},
                         {"mean_score", z.mean_score},
                         {"baseline_score", z.baseline_score},
                         {"mean_similarity", z.mean_similarity},
                         {"random_pair_similarity", z.random_pair_similarity}};
    emit(log, line);
    modes[z.mode] = {{"mean_score", z.mean_score}, {"baseline_score", z.baseline_score}};
  }
  summary["modes"] = modes;
  return summary.dump();
}

std::string run_export(const RunConfig& cfg, const LogSink& log) {
  require_path(cfg.checkpoint, "checkpoint");
  require_path(cfg.export_path, "export_path");
  const auto ck = load_checkpoint(cfg.checkpoint);
  write_file_atomic(cfg.export_path, rows_text(ck.header.relations, ck.model.store.relation));
  if (!cfg.export_entities_path.empty()) {
    write_file_atomic(cfg.export_entities_path, rows_text(ck.header.entities, ck.model.store.entity));
  }
  ordered_json summary = {{"event", "export_done"},
                          {"relations", ck.header.relations.size()},
                          {"dim", ck.header.dim},
                          {"path", cfg.export_path.string()}};
  if (!cfg.export_entities_path.empty()) summary["entities"] = ck.header.entities.size();
  emit(log, summary);
  return summary.dump();
}

std::string run_split_stats(const RunConfig& cfg, const LogSink& log) {
  const auto kg = load_graph(cfg);
  const auto groups = kg::frequency_split(kg, cfg.many_fraction);
  auto group_json = [&](const std::set<kg::Id>& ids) {
    ordered_json arr = ordered_json::array();
    for (kg::Id r : ids) {
      arr.push_back({{"relation", kg.relations.name(r)}, {"train_triples", groups.train_frequency.at(r)}});
    }
    return arr;
  };
  ordered_json doc = {{"entities", kg.num_entities()},
                      {"base_relations", kg.base_relations},
                      {"train", kg.train.size()},
                      {"valid", kg.valid.size()},
                      {"test", kg.test.size()},
                      {"duplicates_dropped",
                       {{"train", kg.duplicates_dropped[0]},
                        {"valid", kg.duplicates_dropped[1]},
                        {"test", kg.duplicates_dropped[2]}}},
                      {"withheld_lines", kg.withheld_lines},
                      {"many_fraction", cfg.many_fraction},
                      {"many_shot", group_json(groups.many_shot)},
                      {"few_shot", group_json(groups.few_shot)}};
  if (!cfg.report.empty()) write_file_atomic(cfg.report, doc.dump(2) + "\n");
  ordered_json summary = {{"event", "split_stats"},
                          {"many_shot", groups.many_shot.size()},
                          {"few_shot", groups.few_shot.size()},
                          {"report", cfg.report.string()}};
  emit(log, summary);
  return doc.dump();
}

}  // namespace kglp::run
