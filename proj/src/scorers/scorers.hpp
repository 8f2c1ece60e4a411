#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgdata/knowledge_graph.hpp"
#include "numcore/ops.hpp"
#include "numcore/optim.hpp"

namespace kglp::scorer {

enum class ModelKind { distmult, conve, transe };

const char* model_name(ModelKind kind);
ModelKind parse_model(const std::string& name);

/// ConvE layout: embeddings are reshaped to height x width and stacked.
struct ConvEConfig {
  std::size_t height = 10;
  std::size_t width = 20;
  std::size_t filters = 32;
  std::size_t kernel = 3;
  double input_dropout = 0.2;
  double feature_dropout = 0.2;
  double hidden_dropout = 0.3;

  std::size_t feature_count() const { return filters * (2 * height - kernel + 1) * (width - kernel + 1); }
};

/// Entity and relation tables plus scorer weights. The relation table has one
/// row per augmented relation and a final UNK row, and doubles as the
/// relation memory read by the GRL head.
struct ParameterStore {
  ModelKind kind = ModelKind::distmult;
  std::size_t dim = 0;
  ConvEConfig conve;

  num::Tensor entity;       // [|E|, dim]
  num::Tensor relation;     // [|R_aug| + 1, dim]
  num::Tensor entity_bias;  // [|E|] (unused by TransE)

  num::Tensor conv_filters, conv_bias;      // [C, 1, k, k], [C]
  num::Tensor fc_weight, fc_bias;           // [features, dim], [dim]
  num::Tensor bn0_gamma, bn0_beta;          // [1]
  num::Tensor bn1_gamma, bn1_beta;          // [C]
  num::Tensor bn2_gamma, bn2_beta;          // [dim]
  num::BatchStats bn0, bn1, bn2;

  static ParameterStore create(ModelKind kind, std::size_t num_entities, std::size_t relation_rows, std::size_t dim,
                               const ConvEConfig& conve, std::uint64_t seed);

  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  // Running statistics: checkpointed, never trained.
  std::vector<std::pair<std::string, num::Tensor>> named_buffers() const;
};

/// logits[b][e] = sum_d head[b][d] * rel[b][d] * entity[e][d] + bias[e]
num::Tensor distmult_scores(const num::Tensor& head_vecs, const num::Tensor& rel_vecs, const ParameterStore& store);

/// ConvE-style 1-N scores. Dropout layers are active only when `train`.
num::Tensor conve_scores(const num::Tensor& head_vecs, const num::Tensor& rel_vecs, ParameterStore& store, bool train,
                         num::Rng& rng);

/// -||head + rel - entity||_1 for every entity (no tape).
num::Tensor transe_scores(const num::Tensor& head_vecs, const num::Tensor& rel_vecs, const ParameterStore& store);
double transe_score(kg::Id head, kg::Id relation, kg::Id tail, const ParameterStore& store);

/// Dispatch on store.kind; `rel_vecs` may be rows of the relation table or
/// substituted vectors (zero-shot, direct fusion).
num::Tensor score_all(const num::Tensor& head_vecs, const num::Tensor& rel_vecs, ParameterStore& store, bool train,
                      num::Rng& rng);

/// Convenience lookups of the embedding rows for id lists.
num::Tensor entity_rows(const ParameterStore& store, std::span<const kg::Id> ids);
num::Tensor relation_rows(const ParameterStore& store, std::span<const kg::Id> ids);

/// 1-N multi-label targets: row b marks every train answer of (head_b, rel_b),
/// then t <- t * (1 - smoothing) + smoothing / |E|.
num::Tensor label_matrix(std::span<const kg::Triple> batch, const kg::FilterIndex& train_answers,
                         std::size_t num_entities, double smoothing);

/// Score-aware binary cross entropy averaged over every (query, candidate) cell.
num::Tensor score_loss(const num::Tensor& logits, const num::Tensor& labels);

/// mean(max(0, margin + neg - pos)) over paired score vectors.
num::Tensor margin_loss(const num::Tensor& pos_scores, const num::Tensor& neg_scores, double margin);

/// Scores (h, r, t) triples under TransE with the tape on.
num::Tensor transe_triple_scores(std::span<const kg::Triple> triples, const ParameterStore& store);

/// Uniform head-or-tail corruption, `per_positive` negatives for each triple.
std::vector<kg::Triple> corrupt(std::span<const kg::Triple> batch, std::size_t num_entities, std::size_t per_positive,
                                num::Rng& rng);

/// Projects every entity row to unit L2 norm.
void normalize_entities(ParameterStore& store);

/// One margin-ranking update: corrupt, score, backprop, Adam step, renormalize.
/// Returns the loss before the update.
double transe_train_step(std::span<const kg::Triple> batch, ParameterStore& store, num::Adam& optimizer,
                         double margin, std::size_t negatives, num::Rng& rng);

}  // namespace kglp::scorer
