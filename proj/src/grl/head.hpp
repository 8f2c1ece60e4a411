#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgdata/knowledge_graph.hpp"
#include "numcore/ops.hpp"
#include "scorers/scorers.hpp"

namespace kglp::grl {

enum class JointMode { sub, multiply, concat };
// adaptive: learned gate; fixed: constant p; direct: fuse rk into the scorer's
// relation vector instead of training a classifier.
enum class FusionMode { adaptive, fixed, direct };
enum class MaskMode { pre_softmax, post_softmax };
enum class ZeroShotMode { fusion, most_similar };

struct GrlConfig {
  JointMode joint = JointMode::concat;
  FusionMode fusion = FusionMode::adaptive;
  // Required for fixed; optional for direct (absent means a learned gate).
  std::optional<double> fixed_p;
  double lambda = 0.1;
  MaskMode mask = MaskMode::pre_softmax;

  bool learned_gate() const { return !fixed_p.has_value(); }
};

JointMode parse_joint(const std::string& s);
const char* joint_name(JointMode m);
// "adaptive", "fixed:<p>", "direct" or "direct:<p>".
void parse_fusion(const std::string& s, GrlConfig& cfg);
std::string fusion_name(const GrlConfig& cfg);
MaskMode parse_mask(const std::string& s);
const char* mask_name(MaskMode m);
ZeroShotMode parse_zero_shot_mode(const std::string& s);
const char* zero_shot_mode_name(ZeroShotMode m);

/// Per-batch forward record.
struct GrlForward {
  num::Tensor j;      // [n, d]
  num::Tensor alpha;  // [n, K]
  num::Tensor rk;     // [n, d]
  num::Tensor p;      // [n, 1]
  num::Tensor f;      // [n, d]
};

/// The relation-learning head. Its memory is never stored here: every call
/// reads rows [0, K) of the live relation table it is handed.
class GrlHead {
 public:
  static GrlHead create(const GrlConfig& cfg, std::size_t dim, std::size_t num_classes, std::uint64_t seed);

  const GrlConfig& config() const { return cfg_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return k_; }

  num::Tensor w1, b1;  // [2d, d], [d]; concat mode only
  num::Tensor wg, bg;  // [d, 1], [1]; learned gate only
  num::Tensor wc;      // [d, K]

  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;

  /// Rows [0, K) of the relation table, differentiable back into it.
  num::Tensor memory(const num::Tensor& relation_table) const;

  num::Tensor joint_vector(const num::Tensor& head_vecs, const num::Tensor& tail_vecs) const;
  /// softmax(j M^T) with the `masked` column (per row, -1 for none) removed.
  num::Tensor knowledge_attention(const num::Tensor& j, const num::Tensor& memory,
                                  std::span<const kg::Id> masked = {}) const;
  static num::Tensor relational_knowledge(const num::Tensor& alpha, const num::Tensor& memory);
  /// sigmoid(j W_g + b_g) -> [n, 1]; only with a learned gate.
  num::Tensor fusion_gate(const num::Tensor& j) const;
  /// The gate for this configuration: learned, or the constant p.
  num::Tensor gate(const num::Tensor& j) const;
  /// (1 - p) * a + p * b with p a [n, 1] column.
  static num::Tensor fuse(const num::Tensor& a, const num::Tensor& b, const num::Tensor& p);

  GrlForward forward(const num::Tensor& head_vecs, const num::Tensor& tail_vecs, const num::Tensor& relation_table,
                     std::span<const kg::Id> masked = {}) const;

  num::Tensor classification_loss(const num::Tensor& f, std::span<const kg::Id> gold) const;
  static num::Tensor total_loss(const num::Tensor& score_loss, const num::Tensor& class_loss, double lambda);

  /// argmax of the unmasked attention, ties to the smallest id; no tape.
  std::vector<kg::Id> most_similar_relation(const num::Tensor& head_vecs, const num::Tensor& tail_vecs,
                                            const num::Tensor& relation_table, num::Tensor* alpha_out = nullptr) const;

  /// Stand-in relation vectors for an unseen relation, one row per pair.
  num::Tensor zero_shot_relation_embedding(const num::Tensor& head_vecs, const num::Tensor& tail_vecs,
                                           const num::Tensor& relation_table, ZeroShotMode mode) const;

  /// r' = (1 - p) * r + p * rk, fed to the scorer in direct mode.
  num::Tensor direct_fusion_relation(const num::Tensor& head_vecs, const num::Tensor& tail_vecs,
                                     const num::Tensor& rel_vecs, const num::Tensor& relation_table,
                                     std::span<const kg::Id> masked = {}) const;

 private:
  GrlConfig cfg_;
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
};

/// Writes `gold_relation<TAB>k<TAB>alpha[k]` rows for the given triples.
void write_attention(const std::string& path, const GrlHead& head, const scorer::ParameterStore& store,
                     const kg::KnowledgeGraph& kg, std::span<const kg::Triple> triples);

}  // namespace kglp::grl
