#include "scorers/scorers.hpp"

#include <cmath>

namespace kglp::scorer {

using num::Tensor;

const char* model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::distmult: return "distmult";
    case ModelKind::conve: return "conve";
    case ModelKind::transe: return "transe";
  }
  return "?";
}

ModelKind parse_model(const std::string& name) {
  if (name == "distmult") return ModelKind::distmult;
  if (name == "conve") return ModelKind::conve;
  if (name == "transe") return ModelKind::transe;
  throw ConfigError("unknown model '" + name + "' (expected distmult, conve or transe)");
}

ParameterStore ParameterStore::create(ModelKind kind, std::size_t num_entities, std::size_t relation_rows,
                                      std::size_t dim, const ConvEConfig& conve, std::uint64_t seed) {
  if (num_entities == 0 || relation_rows == 0 || dim == 0) {
    throw ConfigError("parameter store: entity count, relation rows and dim must be positive");
  }
  ParameterStore s;
  s.kind = kind;
  s.dim = dim;
  s.conve = conve;
  std::uint64_t k = 0;
  auto init = [&](const num::Shape& shape) { return num::xavier_init(shape, num::derive_seed(seed, num::Stream::init, k++)); };

  s.entity = init({num_entities, dim});
  s.relation = init({relation_rows, dim});
  if (kind != ModelKind::transe) s.entity_bias = Tensor::zeros({num_entities}, true);

  if (kind == ModelKind::conve) {
    if (conve.height * conve.width != dim) {
      throw ConfigError("conve: dim " + std::to_string(dim) + " is not " + std::to_string(conve.height) + " x " +
                        std::to_string(conve.width));
    }
    if (conve.kernel == 0 || conve.kernel > conve.width || conve.kernel > 2 * conve.height || conve.filters == 0) {
      throw ConfigError("conve: kernel does not fit the stacked input");
    }
    const std::size_t c = conve.filters;
    s.conv_filters = init({c, 1, conve.kernel, conve.kernel});
    s.conv_bias = Tensor::zeros({c}, true);
    s.fc_weight = init({conve.feature_count(), dim});
    s.fc_bias = Tensor::zeros({dim}, true);
    s.bn0_gamma = Tensor::full({1}, 1.0, true);
    s.bn0_beta = Tensor::zeros({1}, true);
    s.bn1_gamma = Tensor::full({c}, 1.0, true);
    s.bn1_beta = Tensor::zeros({c}, true);
    s.bn2_gamma = Tensor::full({dim}, 1.0, true);
    s.bn2_beta = Tensor::zeros({dim}, true);
    s.bn0 = num::BatchStats::make(1);
    s.bn1 = num::BatchStats::make(c);
    s.bn2 = num::BatchStats::make(dim);
  }
  if (kind == ModelKind::transe) normalize_entities(s);
  return s;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out{{"entity", entity}, {"relation", relation}};
  if (kind == ModelKind::transe) return out;
  out.emplace_back("entity_bias", entity_bias);
  if (kind == ModelKind::conve) {
    out.insert(out.end(), {{"conv_filters", conv_filters},
                           {"conv_bias", conv_bias},
                           {"fc_weight", fc_weight},
                           {"fc_bias", fc_bias},
                           {"bn0_gamma", bn0_gamma},
                           {"bn0_beta", bn0_beta},
                           {"bn1_gamma", bn1_gamma},
                           {"bn1_beta", bn1_beta},
                           {"bn2_gamma", bn2_gamma},
                           {"bn2_beta", bn2_beta}});
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::named_buffers() const {
  if (kind != ModelKind::conve) return {};
  return {{"bn0_mean", bn0.running_mean}, {"bn0_var", bn0.running_var}, {"bn1_mean", bn1.running_mean},
          {"bn1_var", bn1.running_var},   {"bn2_mean", bn2.running_mean}, {"bn2_var", bn2.running_var}};
}

namespace {

void check_query(const Tensor& head_vecs, const Tensor& rel_vecs, const ParameterStore& store) {
  if (head_vecs.rank() != 2 || head_vecs.dim(1) != store.dim || rel_vecs.shape() != head_vecs.shape()) {
    throw ContractError("scorer: head " + num::shape_str(head_vecs.shape()) + " and relation " +
                        num::shape_str(rel_vecs.shape()) + " must both be [batch, " + std::to_string(store.dim) + "]");
  }
}

}  // namespace

Tensor distmult_scores(const Tensor& head_vecs, const Tensor& rel_vecs, const ParameterStore& store) {
  check_query(head_vecs, rel_vecs, store);
  return num::add(num::matmul(num::mul(head_vecs, rel_vecs), store.entity, true), store.entity_bias);
}

Tensor conve_scores(const Tensor& head_vecs, const Tensor& rel_vecs, ParameterStore& store, bool train,
                    num::Rng& rng) {
  check_query(head_vecs, rel_vecs, store);
  const auto& cfg = store.conve;
  if (cfg.height * cfg.width != store.dim) throw ConfigError("conve: dim is not height x width");
  const std::size_t n = head_vecs.dim(0);
  Tensor x = num::concat({num::reshape(head_vecs, {n, 1, cfg.height, cfg.width}),
                          num::reshape(rel_vecs, {n, 1, cfg.height, cfg.width})},
                         2);
  x = num::dropout(x, cfg.input_dropout, train, rng);
  x = num::batch_standardize(x, store.bn0_gamma, store.bn0_beta, store.bn0, train);
  x = num::conv2d(x, store.conv_filters, store.conv_bias);
  x = num::batch_standardize(x, store.bn1_gamma, store.bn1_beta, store.bn1, train);
  x = num::relu(x);
  x = num::dropout(x, cfg.feature_dropout, train, rng);
  x = num::reshape(x, {n, cfg.feature_count()});
  x = num::add(num::matmul(x, store.fc_weight), store.fc_bias);
  x = num::dropout(x, cfg.hidden_dropout, train, rng);
  x = num::batch_standardize(x, store.bn2_gamma, store.bn2_beta, store.bn2, train);
  x = num::relu(x);
  return num::add(num::matmul(x, store.entity, true), store.entity_bias);
}

Tensor transe_scores(const Tensor& head_vecs, const Tensor& rel_vecs, const ParameterStore& store) {
  check_query(head_vecs, rel_vecs, store);
  const std::size_t n = head_vecs.dim(0), d = store.dim, ne = store.entity.dim(0);
  const auto& h = head_vecs.data();
  const auto& r = rel_vecs.data();
  const auto& e = store.entity.data();
  num::Buffer out(n * ne);
  std::vector<double> q(d);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < d; ++k) q[k] = h[b * d + k] + r[b * d + k];
    for (std::size_t j = 0; j < ne; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += std::abs(q[k] - e[j * d + k]);
      out[b * ne + j] = -acc;
    }
  }
  return Tensor::from({n, ne}, std::move(out));
}

double transe_score(kg::Id head, kg::Id relation, kg::Id tail, const ParameterStore& store) {
  const std::size_t d = store.dim;
  const auto ne = static_cast<kg::Id>(store.entity.dim(0));
  const auto nr = static_cast<kg::Id>(store.relation.dim(0));
  if (head < 0 || head >= ne || tail < 0 || tail >= ne || relation < 0 || relation >= nr) {
    throw ContractError("transe_score: id out of range");
  }
  const double* h = store.entity.data().data() + static_cast<std::size_t>(head) * d;
  const double* r = store.relation.data().data() + static_cast<std::size_t>(relation) * d;
  const double* t = store.entity.data().data() + static_cast<std::size_t>(tail) * d;
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) acc += std::abs(h[k] + r[k] - t[k]);
  return -acc;
}

Tensor score_all(const Tensor& head_vecs, const Tensor& rel_vecs, ParameterStore& store, bool train,
                 num::Rng& rng) {
  switch (store.kind) {
    case ModelKind::distmult: return distmult_scores(head_vecs, rel_vecs, store);
    case ModelKind::conve: return conve_scores(head_vecs, rel_vecs, store, train, rng);
    case ModelKind::transe: return transe_scores(head_vecs, rel_vecs, store);
  }
  throw ContractError("score_all: unknown model kind");
}

Tensor entity_rows(const ParameterStore& store, std::span<const kg::Id> ids) {
  return num::embedding_lookup(store.entity, ids);
}

Tensor relation_rows(const ParameterStore& store, std::span<const kg::Id> ids) {
  return num::embedding_lookup(store.relation, ids);
}

Tensor label_matrix(std::span<const kg::Triple> batch, const kg::FilterIndex& train_answers, std::size_t num_entities,
                    double smoothing) {
  if (batch.empty()) throw ContractError("label_matrix: empty batch");
  if (smoothing < 0.0 || smoothing >= 1.0) throw ContractError("label_matrix: smoothing outside [0, 1)");
  const double off = smoothing / static_cast<double>(num_entities);
  const double on = (1.0 - smoothing) + off;
  num::Buffer t(batch.size() * num_entities, off);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (kg::Id e : train_answers.answers(batch[b].head, batch[b].relation)) {
      t[b * num_entities + static_cast<std::size_t>(e)] = on;
    }
  }
  return Tensor::from({batch.size(), num_entities}, std::move(t));
}

Tensor score_loss(const Tensor& logits, const Tensor& labels) {
  for (double v : labels.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("score_loss: labels must lie in [0, 1]");
  }
  return num::bce_with_logits(logits, labels);
}

Tensor margin_loss(const Tensor& pos_scores, const Tensor& neg_scores, double margin) {
  if (!(margin > 0.0)) throw ContractError("margin_loss: margin must be > 0");
  if (pos_scores.shape() != neg_scores.shape()) throw ContractError("margin_loss: score shapes differ");
  Tensor hinge = num::relu(num::add(num::sub(neg_scores, pos_scores), Tensor::scalar(margin)));
  return num::mul(num::sum(hinge), Tensor::scalar(1.0 / static_cast<double>(pos_scores.numel())));
}

Tensor transe_triple_scores(std::span<const kg::Triple> triples, const ParameterStore& store) {
  std::vector<kg::Id> h, r, t;
  for (const auto& x : triples) {
    h.push_back(x.head);
    r.push_back(x.relation);
    t.push_back(x.tail);
  }
  Tensor diff = num::sub(num::add(num::embedding_lookup(store.entity, h), num::embedding_lookup(store.relation, r)),
                         num::embedding_lookup(store.entity, t));
  return num::mul(num::sum(num::abs(diff), 1), Tensor::scalar(-1.0));
}

std::vector<kg::Triple> corrupt(std::span<const kg::Triple> batch, std::size_t num_entities, std::size_t per_positive,
                                num::Rng& rng) {
  std::vector<kg::Triple> out;
  out.reserve(batch.size() * per_positive);
  for (const auto& t : batch) {
    for (std::size_t i = 0; i < per_positive; ++i) {
      kg::Triple neg = t;
      const auto e = static_cast<kg::Id>(num::uniform_index(rng, num_entities));
      if (num::uniform01(rng) < 0.5) {
        neg.head = e;
      } else {
        neg.tail = e;
      }
      out.push_back(neg);
    }
  }
  return out;
}

void normalize_entities(ParameterStore& store) {
  const std::size_t d = store.dim;
  auto e = store.entity.mutable_data();
  for (std::size_t row = 0; row < e.size() / d; ++row) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += e[row * d + k] * e[row * d + k];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t k = 0; k < d; ++k) e[row * d + k] /= norm;
  }
}

double transe_train_step(std::span<const kg::Triple> batch, ParameterStore& store, num::Adam& optimizer,
                         double margin, std::size_t negatives, num::Rng& rng) {
  if (batch.empty()) throw ContractError("transe_train_step: empty batch");
  if (negatives == 0) throw ContractError("transe_train_step: need at least one negative");
  const auto neg = corrupt(batch, store.entity.dim(0), negatives, rng);
  std::vector<kg::Triple> pos;
  pos.reserve(neg.size());
  for (const auto& t : batch) pos.insert(pos.end(), negatives, t);
  Tensor loss = margin_loss(transe_triple_scores(pos, store), transe_triple_scores(neg, store), margin);
  const double value = loss.item();
  num::backward(loss);
  optimizer.step();
  normalize_entities(store);
  return value;
}

}  // namespace kglp::scorer
