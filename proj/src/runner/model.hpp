#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evalrank/ranking.hpp"
#include "grl/head.hpp"
#include "kgdata/knowledge_graph.hpp"
#include "runner/config.hpp"
#include "scorers/scorers.hpp"

namespace kglp::run {

/// A base scorer with its optional relation-learning head.
struct LinkModel {
  scorer::ParameterStore store;
  std::optional<grl::GrlHead> head;

  static LinkModel create(const RunConfig& cfg, std::size_t num_entities, std::size_t num_classes);

  bool direct() const { return head && head->config().fusion == grl::FusionMode::direct; }

  /// Trainable tensors, scorer first.
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  /// Parameters plus running statistics: everything a checkpoint holds.
  std::vector<std::pair<std::string, num::Tensor>> named_state() const;

  /// Eval-mode logits [n, |E|] for tail queries; no tape.
  num::Tensor score_queries(std::span<const kg::Id> heads, std::span<const kg::Id> relations);
  /// Eval-mode logits [n, |E|] with caller-supplied relation vectors.
  num::Tensor score_with(std::span<const kg::Id> heads, const num::Tensor& relation_vecs);

  eval::QueryScorer query_scorer();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double score_loss = 0.0;
  double class_loss = 0.0;
  std::optional<double> val_mrr;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_val_mrr = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

using LogSink = std::function<void(const std::string& json_line)>;

/// Trains in place with early stopping on validation MRR, then leaves the
/// best snapshot (rounded to 32-bit floats, as checkpoints store it) in the
/// model.
TrainResult train_model(LinkModel& model, const kg::KnowledgeGraph& kg, const RunConfig& cfg, const LogSink& log);

/// Rounds every state tensor to the nearest 32-bit float.
void quantize_state(LinkModel& model);

}  // namespace kglp::run
