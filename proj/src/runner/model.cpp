#include "runner/model.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "numcore/optim.hpp"

namespace kglp::run {

using num::Tensor;

LinkModel LinkModel::create(const RunConfig& cfg, std::size_t num_entities, std::size_t num_classes) {
  LinkModel m;
  // One row per augmented relation plus the UNK row.
  m.store = scorer::ParameterStore::create(cfg.model, num_entities, num_classes + 1, cfg.model_dim(), cfg.conve,
                                           cfg.seed);
  if (cfg.grl) m.head = grl::GrlHead::create(cfg.grl_cfg, cfg.model_dim(), num_classes, cfg.seed);
  return m;
}

std::vector<std::pair<std::string, Tensor>> LinkModel::named_parameters() const {
  auto out = store.named_parameters();
  if (head) {
    for (auto& p : head->named_parameters()) out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> LinkModel::named_state() const {
  auto out = named_parameters();
  for (auto& b : store.named_buffers()) out.push_back(std::move(b));
  return out;
}

Tensor LinkModel::score_with(std::span<const kg::Id> heads, const Tensor& relation_vecs) {
  num::NoGradGuard guard;
  num::Rng unused(0);
  return scorer::score_all(scorer::entity_rows(store, heads), relation_vecs, store, false, unused);
}

Tensor LinkModel::score_queries(std::span<const kg::Id> heads, std::span<const kg::Id> relations) {
  num::NoGradGuard guard;
  num::Rng unused(0);
  if (!direct()) {
    return scorer::score_all(scorer::entity_rows(store, heads), scorer::relation_rows(store, relations), store, false,
                             unused);
  }
  // Direct fusion conditions the relation vector on the candidate tail, so
  // every (query, candidate) pair gets its own relation vector.
  const std::size_t ne = store.entity.dim(0);
  num::Buffer out(heads.size() * ne);
  std::vector<kg::Id> all(ne);
  for (std::size_t e = 0; e < ne; ++e) all[e] = static_cast<kg::Id>(e);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::vector<kg::Id> h(ne, heads[i]), r(ne, relations[i]);
    const Tensor eh = scorer::entity_rows(store, h);
    const Tensor rel = head->direct_fusion_relation(eh, scorer::entity_rows(store, all),
                                                    scorer::relation_rows(store, r), store.relation, r);
    const Tensor logits = scorer::score_all(eh, rel, store, false, unused);
    for (std::size_t e = 0; e < ne; ++e) out[i * ne + e] = logits.at(e, e);
  }
  return Tensor::from({heads.size(), ne}, std::move(out));
}

eval::QueryScorer LinkModel::query_scorer() {
  return [this](std::span<const kg::Id> h, std::span<const kg::Id> r) { return score_queries(h, r); };
}

void quantize_state(LinkModel& model) {
  for (auto& [name, t] : model.named_state()) {
    for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

namespace {

using Snapshot = std::vector<std::vector<float>>;

Snapshot take_snapshot(const LinkModel& model) {
  Snapshot s;
  for (const auto& [name, t] : model.named_state()) s.emplace_back(t.data().begin(), t.data().end());
  return s;
}

void restore_snapshot(LinkModel& model, const Snapshot& s) {
  auto state = model.named_state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto data = state[i].second.mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = static_cast<double>(s[i][k]);
  }
}

std::string fmt_json(double v) {
  nlohmann::json j = v;
  return j.dump();
}

}  // namespace

TrainResult train_model(LinkModel& model, const kg::KnowledgeGraph& kg, const RunConfig& cfg, const LogSink& log) {
  if (!kg.augmented) throw ContractError("train_model: the graph must carry inverse relations");
  if (kg.valid.empty()) throw DataError("validation split is empty; early stopping needs it");

  std::vector<Tensor> params;
  for (const auto& [name, p] : model.named_parameters()) params.push_back(p);
  num::Adam opt(params, cfg.lr);
  kg::Batcher batcher(kg.train, cfg.batch_size, num::derive_seed(cfg.seed, num::Stream::shuffle));
  num::Rng dropout_rng = num::make_rng(cfg.seed, num::Stream::dropout);
  num::Rng negative_rng = num::make_rng(cfg.seed, num::Stream::negatives);
  const auto groups = kg::frequency_split(kg, cfg.many_fraction);
  const std::size_t ne = kg.num_entities();
  const bool transe = cfg.model == scorer::ModelKind::transe;
  const bool classify = model.head && !model.direct();

  TrainResult result;
  Snapshot best;
  double best_mrr = -1.0;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_ls = 0.0, sum_lc = 0.0;
    std::size_t batch_index = 0;
    const auto batches = batcher.epoch(epoch - 1);
    for (const auto& batch : batches) {
      double ls = 0.0, lc = 0.0;
      if (transe) {
        ls = scorer::transe_train_step(batch, model.store, opt, cfg.transe_margin, cfg.transe_negatives, negative_rng);
      } else {
        std::vector<kg::Id> heads, rels, tails;
        heads.reserve(batch.size());
        rels.reserve(batch.size());
        tails.reserve(batch.size());
        for (const auto& t : batch) {
          heads.push_back(t.head);
          rels.push_back(t.relation);
          tails.push_back(t.tail);
        }
        const Tensor eh = scorer::entity_rows(model.store, heads);
        Tensor rv = scorer::relation_rows(model.store, rels);
        if (model.direct()) {
          rv = model.head->direct_fusion_relation(eh, scorer::entity_rows(model.store, tails), rv,
                                                  model.store.relation, rels);
        }
        const Tensor logits = scorer::score_all(eh, rv, model.store, true, dropout_rng);
        const Tensor l_s = scorer::score_loss(logits, scorer::label_matrix(batch, kg.train_filter, ne, cfg.label_smoothing));
        Tensor loss = l_s;
        ls = l_s.item();
        if (classify) {
          const auto fw = model.head->forward(eh, scorer::entity_rows(model.store, tails), model.store.relation, rels);
          const Tensor l_c = model.head->classification_loss(fw.f, rels);
          lc = l_c.item();
          loss = grl::GrlHead::total_loss(l_s, l_c, cfg.grl_cfg.lambda);
        }
        if (!std::isfinite(ls) || !std::isfinite(lc)) {
          num::Graph::active().clear();
          throw TrainingError("non-finite " + std::string(!std::isfinite(ls) ? "L_s" : "L_c") + " at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch_index));
        }
        num::backward(loss);
        opt.step();
      }
      if (!std::isfinite(ls)) {
        throw TrainingError("non-finite L_s at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      sum_ls += ls;
      sum_lc += lc;
      ++batch_index;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.score_loss = sum_ls / static_cast<double>(batches.size());
    rec.class_loss = sum_lc / static_cast<double>(batches.size());
    bool stop = false;
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      const auto report = eval::evaluate_split(model.query_scorer(), kg, kg::Split::valid, groups, cfg.eval_batch_size);
      rec.val_mrr = report.all.mrr;
      if (report.all.mrr > best_mrr) {
        best_mrr = report.all.mrr;
        result.best_epoch = epoch;
        best = take_snapshot(model);
        stale = 0;
      } else if (++stale >= cfg.patience) {
        stop = true;
      }
    }
    result.log.push_back(rec);
    result.epochs_run = epoch;
    if (log) {
      std::ostringstream line;
      line << "{\"event\":\"epoch\",\"epoch\":" << epoch << ",\"L_s\":" << fmt_json(rec.score_loss)
           << ",\"L_c\":" << fmt_json(rec.class_loss)
           << ",\"val_mrr\":" << (rec.val_mrr ? fmt_json(*rec.val_mrr) : "null") << "}";
      log(line.str());
    }
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  restore_snapshot(model, best);
  result.best_val_mrr = best_mrr;
  return result;
}

}  // namespace kglp::run
