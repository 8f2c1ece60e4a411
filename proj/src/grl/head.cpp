#include "grl/head.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "numcore/optim.hpp"

namespace kglp::grl {

using num::Tensor;

JointMode parse_joint(const std::string& s) {
  if (s == "sub") return JointMode::sub;
  if (s == "multiply") return JointMode::multiply;
  if (s == "concat") return JointMode::concat;
  throw ConfigError("joint_mode must be sub, multiply or concat, got '" + s + "'");
}

const char* joint_name(JointMode m) {
  switch (m) {
    case JointMode::sub: return "sub";
    case JointMode::multiply: return "multiply";
    case JointMode::concat: return "concat";
  }
  return "?";
}

namespace {

double parse_probability(const std::string& text, const std::string& whole) {
  std::size_t used = 0;
  double p = 0.0;
  try {
    p = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !(p >= 0.0 && p <= 1.0)) {
    throw ConfigError("fusion_mode '" + whole + "': p must be a number in [0, 1]");
  }
  return p;
}

}  // namespace

void parse_fusion(const std::string& s, GrlConfig& cfg) {
  const auto colon = s.find(':');
  const std::string mode = s.substr(0, colon);
  std::optional<double> p;
  if (colon != std::string::npos) p = parse_probability(s.substr(colon + 1), s);
  if (mode == "adaptive" && !p) {
    cfg.fusion = FusionMode::adaptive;
  } else if (mode == "fixed" && p) {
    cfg.fusion = FusionMode::fixed;
  } else if (mode == "direct") {
    cfg.fusion = FusionMode::direct;
  } else {
    throw ConfigError("fusion_mode must be adaptive, fixed:<p>, direct or direct:<p>, got '" + s + "'");
  }
  cfg.fixed_p = p;
}

std::string fusion_name(const GrlConfig& cfg) {
  std::string out = cfg.fusion == FusionMode::adaptive ? "adaptive" : cfg.fusion == FusionMode::fixed ? "fixed" : "direct";
  if (cfg.fixed_p) {
    std::ostringstream p;
    p << *cfg.fixed_p;
    out += ":" + p.str();
  }
  return out;
}

MaskMode parse_mask(const std::string& s) {
  if (s == "pre_softmax") return MaskMode::pre_softmax;
  if (s == "post_softmax") return MaskMode::post_softmax;
  throw ConfigError("mask_mode must be pre_softmax or post_softmax, got '" + s + "'");
}

const char* mask_name(MaskMode m) { return m == MaskMode::pre_softmax ? "pre_softmax" : "post_softmax"; }

ZeroShotMode parse_zero_shot_mode(const std::string& s) {
  if (s == "fusion") return ZeroShotMode::fusion;
  if (s == "most_similar") return ZeroShotMode::most_similar;
  throw ConfigError("zero-shot mode must be fusion or most_similar, got '" + s + "'");
}

const char* zero_shot_mode_name(ZeroShotMode m) { return m == ZeroShotMode::fusion ? "fusion" : "most_similar"; }

GrlHead GrlHead::create(const GrlConfig& cfg, std::size_t dim, std::size_t num_classes, std::uint64_t seed) {
  if (dim == 0 || num_classes == 0) throw ConfigError("grl: dim and class count must be positive");
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) throw ConfigError("grl: lambda must be >= 0");
  if (cfg.fusion == FusionMode::fixed && !cfg.fixed_p) throw ConfigError("grl: fixed fusion needs p");
  if (cfg.fusion == FusionMode::adaptive && cfg.fixed_p) throw ConfigError("grl: adaptive fusion takes no p");
  if (cfg.fixed_p && !(*cfg.fixed_p >= 0.0 && *cfg.fixed_p <= 1.0)) throw ConfigError("grl: p outside [0, 1]");

  GrlHead h;
  h.cfg_ = cfg;
  h.dim_ = dim;
  h.k_ = num_classes;
  std::uint64_t k = 0;
  auto init = [&](const num::Shape& shape) {
    return num::xavier_init(shape, num::derive_seed(seed, num::Stream::grl_init, k++));
  };
  // Draw every tensor regardless of mode so the streams do not shift between
  // configurations.
  Tensor w1 = init({2 * dim, dim});
  Tensor wg = init({dim, 1});
  h.wc = init({dim, num_classes});
  if (cfg.joint == JointMode::concat) {
    h.w1 = w1;
    h.b1 = Tensor::zeros({dim}, true);
  }
  if (cfg.learned_gate()) {
    h.wg = wg;
    h.bg = Tensor::zeros({1}, true);
  }
  return h;
}

std::vector<std::pair<std::string, Tensor>> GrlHead::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (w1.defined()) {
    out.emplace_back("grl_w1", w1);
    out.emplace_back("grl_b1", b1);
  }
  if (wg.defined()) {
    out.emplace_back("grl_wg", wg);
    out.emplace_back("grl_bg", bg);
  }
  // The classifier is dead weight in direct mode, but keeping it makes the
  // checkpoint layout independent of the fusion mode.
  out.emplace_back("grl_wc", wc);
  return out;
}

Tensor GrlHead::memory(const Tensor& relation_table) const {
  if (relation_table.rank() != 2 || relation_table.dim(0) < k_ || relation_table.dim(1) != dim_) {
    throw ContractError("grl: relation table " + num::shape_str(relation_table.shape()) + " cannot hold " +
                        std::to_string(k_) + " classes of dim " + std::to_string(dim_));
  }
  std::vector<kg::Id> ids(k_);
  std::iota(ids.begin(), ids.end(), kg::Id{0});
  return num::embedding_lookup(relation_table, ids);
}

Tensor GrlHead::joint_vector(const Tensor& head_vecs, const Tensor& tail_vecs) const {
  if (head_vecs.rank() != 2 || head_vecs.dim(1) != dim_ || tail_vecs.shape() != head_vecs.shape()) {
    throw ContractError("grl: joint_vector expects two [n, " + std::to_string(dim_) + "] inputs");
  }
  switch (cfg_.joint) {
    case JointMode::sub: return num::sub(head_vecs, tail_vecs);
    case JointMode::multiply: return num::mul(head_vecs, tail_vecs);
    case JointMode::concat: return num::add(num::matmul(num::concat({head_vecs, tail_vecs}, 1), w1), b1);
  }
  throw ContractError("grl: unknown joint mode");
}

Tensor GrlHead::knowledge_attention(const Tensor& j, const Tensor& memory, std::span<const kg::Id> masked) const {
  if (!masked.empty()) {
    if (masked.size() != j.dim(0)) throw ContractError("grl: one mask entry per row required");
    for (kg::Id m : masked) {
      if (m < -1 || m >= static_cast<kg::Id>(memory.dim(0))) {
        throw ContractError("grl: mask id " + std::to_string(m) + " outside [0, " + std::to_string(memory.dim(0)) + ")");
      }
    }
  }
  Tensor logits = num::matmul(j, memory, true);
  if (masked.empty() || cfg_.mask == MaskMode::pre_softmax) return num::softmax(logits, 1, masked);
  // Post-softmax: zero the gold probability and leave the rest as they are.
  num::Buffer keep(logits.numel(), 1.0);
  const std::size_t k = memory.dim(0);
  for (std::size_t row = 0; row < masked.size(); ++row) {
    if (masked[row] >= 0) keep[row * k + static_cast<std::size_t>(masked[row])] = 0.0;
  }
  return num::mul(num::softmax(logits, 1), Tensor::from(logits.shape(), std::move(keep)));
}

Tensor GrlHead::relational_knowledge(const Tensor& alpha, const Tensor& memory) {
  return num::matmul(alpha, memory);
}

Tensor GrlHead::fusion_gate(const Tensor& j) const {
  if (!cfg_.learned_gate()) throw ContractError("grl: fusion_gate needs a learned gate, mode is " + fusion_name(cfg_));
  return num::sigmoid(num::add(num::matmul(j, wg), bg));
}

Tensor GrlHead::gate(const Tensor& j) const {
  if (cfg_.learned_gate()) return fusion_gate(j);
  return Tensor::full({j.dim(0), 1}, *cfg_.fixed_p);
}

Tensor GrlHead::fuse(const Tensor& a, const Tensor& b, const Tensor& p) {
  if (a.shape() != b.shape() || a.rank() != 2 || p.shape() != num::Shape{a.dim(0), 1}) {
    throw ContractError("grl: fuse expects [n, d], [n, d] and [n, 1]");
  }
  for (double v : p.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("grl: fusion probability outside [0, 1]");
  }
  // -p + 1 is exactly 1 - p.
  Tensor one_minus_p = num::add(num::mul(p, Tensor::scalar(-1.0)), Tensor::scalar(1.0));
  return num::add(num::mul(a, one_minus_p), num::mul(b, p));
}

GrlForward GrlHead::forward(const Tensor& head_vecs, const Tensor& tail_vecs, const Tensor& relation_table,
                            std::span<const kg::Id> masked) const {
  GrlForward out;
  const Tensor m = memory(relation_table);
  out.j = joint_vector(head_vecs, tail_vecs);
  out.alpha = knowledge_attention(out.j, m, masked);
  out.rk = relational_knowledge(out.alpha, m);
  out.p = gate(out.j);
  out.f = fuse(out.j, out.rk, out.p);
  return out;
}

Tensor GrlHead::classification_loss(const Tensor& f, std::span<const kg::Id> gold) const {
  for (kg::Id g : gold) {
    if (g < 0 || g >= static_cast<kg::Id>(k_)) {
      throw ContractError("grl: gold relation " + std::to_string(g) + " is not one of the " + std::to_string(k_) +
                          " classes");
    }
  }
  return num::cross_entropy(num::matmul(f, wc), gold);
}

Tensor GrlHead::total_loss(const Tensor& score_loss, const Tensor& class_loss, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("grl: lambda must be >= 0");
  return num::add(score_loss, num::mul(class_loss, Tensor::scalar(lambda)));
}

std::vector<kg::Id> GrlHead::most_similar_relation(const Tensor& head_vecs, const Tensor& tail_vecs,
                                                   const Tensor& relation_table, Tensor* alpha_out) const {
  num::NoGradGuard guard;
  const Tensor m = memory(relation_table);
  const Tensor j = joint_vector(head_vecs, tail_vecs);
  const Tensor logits = num::matmul(j, m, true);
  std::vector<kg::Id> out(j.dim(0));
  const auto& l = logits.data();
  for (std::size_t row = 0; row < out.size(); ++row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k_; ++c) {
      if (l[row * k_ + c] > l[row * k_ + best]) best = c;
    }
    out[row] = static_cast<kg::Id>(best);
  }
  if (alpha_out) *alpha_out = num::softmax(logits, 1);
  return out;
}

Tensor GrlHead::zero_shot_relation_embedding(const Tensor& head_vecs, const Tensor& tail_vecs,
                                             const Tensor& relation_table, ZeroShotMode mode) const {
  num::NoGradGuard guard;
  if (mode == ZeroShotMode::fusion) return forward(head_vecs, tail_vecs, relation_table).f;
  const auto ids = most_similar_relation(head_vecs, tail_vecs, relation_table);
  return num::embedding_lookup(relation_table, ids);
}

Tensor GrlHead::direct_fusion_relation(const Tensor& head_vecs, const Tensor& tail_vecs, const Tensor& rel_vecs,
                                       const Tensor& relation_table, std::span<const kg::Id> masked) const {
  const Tensor m = memory(relation_table);
  const Tensor j = joint_vector(head_vecs, tail_vecs);
  const Tensor rk = relational_knowledge(knowledge_attention(j, m, masked), m);
  return fuse(rel_vecs, rk, gate(j));
}

void write_attention(const std::string& path, const GrlHead& head, const scorer::ParameterStore& store,
                     const kg::KnowledgeGraph& kg, std::span<const kg::Triple> triples) {
  if (triples.empty()) return;
  std::vector<kg::Id> h, t;
  for (const auto& x : triples) {
    h.push_back(x.head);
    t.push_back(x.tail);
  }
  Tensor alpha;
  {
    num::NoGradGuard guard;
    head.most_similar_relation(scorer::entity_rows(store, h), scorer::entity_rows(store, t), store.relation, &alpha);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp);
    out.precision(9);
    const std::size_t k = head.num_classes();
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const std::string& gold = kg.relations.name(triples[i].relation);
      for (std::size_t c = 0; c < k; ++c) out << gold << '\t' << c << '\t' << alpha.data()[i * k + c] << '\n';
    }
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace kglp::grl
