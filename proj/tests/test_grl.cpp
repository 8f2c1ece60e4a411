#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "grl/head.hpp"
#include "numcore/optim.hpp"

using namespace kglp;
using namespace kglp::grl;
using num::Tensor;

namespace {

GrlHead make_head(JointMode joint, std::size_t dim, std::size_t k, const std::string& fusion = "adaptive",
                  double lambda = 0.1) {
  GrlConfig cfg;
  cfg.joint = joint;
  cfg.lambda = lambda;
  parse_fusion(fusion, cfg);
  return GrlHead::create(cfg, dim, k, 3);
}

void fill(const Tensor& t, double v) {
  auto d = const_cast<Tensor&>(t).mutable_data();
  std::fill(d.begin(), d.end(), v);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(num::Shape shape, std::uint64_t seed, double scale = 1.0) {
  num::Rng rng(seed);
  std::vector<double> v(num::shape_numel(shape));
  for (double& x : v) x = scale * (2.0 * num::uniform01(rng) - 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("joint block") {
  SUBCASE("sub of equal vectors is zero") {
    auto h = make_head(JointMode::sub, 3, 2);
    auto e = Tensor::from({1, 3}, {0.4, -1.0, 2.5});
    CHECK(values(h.joint_vector(e, e)) == std::vector<double>{0, 0, 0});
  }
  SUBCASE("multiply") {
    auto h = make_head(JointMode::multiply, 2, 2);
    auto j = h.joint_vector(Tensor::from({1, 2}, {1, 2}), Tensor::from({1, 2}, {0.5, 1}));
    CHECK(values(j) == std::vector<double>{0.5, 2.0});
  }
  SUBCASE("concat with zero weights is the bias") {
    auto h = make_head(JointMode::concat, 4, 2);
    fill(h.w1, 0.0);
    fill(h.b1, 3.0);
    auto j = h.joint_vector(random_tensor({2, 4}, 1), random_tensor({2, 4}, 2));
    for (double v : j.data()) CHECK(v == 3.0);
  }
}

TEST_CASE("knowledge attention") {
  auto h = make_head(JointMode::sub, 2, 3);
  SUBCASE("orthogonal query is uniform") {
    auto m = Tensor::from({3, 2}, {0, 1, 0, -2, 0, 5});
    auto a = h.knowledge_attention(Tensor::from({1, 2}, {1, 0}), m);
    for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("two classes with logits ln 3 and 0") {
    auto h2 = make_head(JointMode::sub, 1, 2);
    auto a = h2.knowledge_attention(Tensor::from({1, 1}, {std::log(3.0)}), Tensor::from({2, 1}, {1, 0}));
    CHECK(a.at(0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(a.at(1) == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("masked gold is exactly zero and the rest renormalize") {
    auto m = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    auto j = Tensor::from({1, 2}, {0.7, -0.2});
    const std::vector<kg::Id> mask{0};
    auto a = h.knowledge_attention(j, m, mask);
    CHECK(a.at(0) == 0.0);
    const double l1 = -0.2, l2 = 0.5;
    CHECK(a.at(1) == doctest::Approx(std::exp(l1) / (std::exp(l1) + std::exp(l2))).epsilon(1e-14));
    CHECK(a.at(1) + a.at(2) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("mask ids are validated") {
    auto m = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    const std::vector<kg::Id> bad{3};
    CHECK_THROWS_AS(h.knowledge_attention(Tensor::from({1, 2}, {1, 1}), m, bad), ContractError);
  }
  SUBCASE("post-softmax masking zeroes without renormalizing") {
    GrlConfig cfg;
    cfg.joint = JointMode::sub;
    cfg.mask = MaskMode::post_softmax;
    auto hp = GrlHead::create(cfg, 2, 3, 1);
    auto m = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    auto j = Tensor::from({1, 2}, {0.7, -0.2});
    const std::vector<kg::Id> mask{0};
    auto masked = hp.knowledge_attention(j, m, mask);
    auto full = hp.knowledge_attention(j, m);
    CHECK(masked.at(0) == 0.0);
    CHECK(masked.at(1) == full.at(1));
    CHECK(masked.at(2) == full.at(2));
  }
}

TEST_CASE("attention rows are distributions and gold masking is exact") {
  auto h = make_head(JointMode::concat, 6, 9);
  auto table = random_tensor({10, 6}, 4, 2.0);
  auto eh = random_tensor({32, 6}, 5, 2.0);
  auto et = random_tensor({32, 6}, 6, 2.0);
  std::vector<kg::Id> gold(32);
  for (std::size_t i = 0; i < 32; ++i) gold[i] = static_cast<kg::Id>((i * 7) % 9);
  auto fw = h.forward(eh, et, table, gold);
  for (std::size_t i = 0; i < 32; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(fw.alpha.at(i, c) >= 0.0);
      sum += fw.alpha.at(i, c);
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
    CHECK(fw.alpha.at(i, static_cast<std::size_t>(gold[i])) == 0.0);
  }
}

TEST_CASE("relational knowledge") {
  auto m = Tensor::from({3, 2}, {1, 2, -3, 4, 0.5, 7});
  SUBCASE("one-hot picks the row") {
    auto rk = GrlHead::relational_knowledge(Tensor::from({1, 3}, {0, 0, 1}), m);
    CHECK(values(rk) == std::vector<double>{0.5, 7});
  }
  SUBCASE("uniform is the mean row") {
    auto rk = GrlHead::relational_knowledge(Tensor::from({1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}), m);
    CHECK(rk.at(0) == doctest::Approx(-1.5 / 3));
    CHECK(rk.at(1) == doctest::Approx(13.0 / 3));
  }
  SUBCASE("stays inside the coordinate hull of the memory") {
    auto h = make_head(JointMode::sub, 5, 7);
    auto mem = random_tensor({7, 5}, 9, 3.0);
    auto j = random_tensor({50, 5}, 10, 3.0);
    auto rk = GrlHead::relational_knowledge(h.knowledge_attention(j, mem), mem);
    for (std::size_t d = 0; d < 5; ++d) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t r = 0; r < 7; ++r) {
        lo = std::min(lo, mem.at(r, d));
        hi = std::max(hi, mem.at(r, d));
      }
      for (std::size_t i = 0; i < 50; ++i) {
        CHECK(rk.at(i, d) >= lo - 1e-12);
        CHECK(rk.at(i, d) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("fusion gate") {
  auto h = make_head(JointMode::sub, 3, 2);
  auto j = random_tensor({4, 3}, 11, 5.0);
  fill(h.wg, 0.0);
  for (double p : values(h.fusion_gate(j))) CHECK(p == 0.5);
  fill(h.bg, 20.0);
  for (double p : values(h.fusion_gate(j))) CHECK(p == doctest::Approx(1.0).epsilon(1e-8));

  auto random = make_head(JointMode::sub, 3, 2);
  for (double p : values(random.fusion_gate(random_tensor({64, 3}, 12, 4.0)))) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  CHECK_THROWS_AS(make_head(JointMode::sub, 3, 2, "fixed:0.5").fusion_gate(j), ContractError);
  CHECK_THROWS_AS(make_head(JointMode::sub, 3, 2, "direct:0").fusion_gate(j), ContractError);
  auto fixed = make_head(JointMode::sub, 3, 2, "fixed:0.5");
  for (double p : values(fixed.gate(j))) CHECK(p == 0.5);
}

TEST_CASE("fuse") {
  auto j = Tensor::from({1, 2}, {2, 0});
  auto rk = Tensor::from({1, 2}, {0, 2});
  CHECK(values(GrlHead::fuse(j, rk, Tensor::from({1, 1}, {0.0}))) == values(j));
  CHECK(values(GrlHead::fuse(j, rk, Tensor::from({1, 1}, {1.0}))) == values(rk));
  CHECK(values(GrlHead::fuse(j, rk, Tensor::from({1, 1}, {0.5}))) == std::vector<double>{1, 1});
  CHECK_THROWS_AS(GrlHead::fuse(j, rk, Tensor::from({1, 1}, {1.5})), ContractError);

  SUBCASE("coordinatewise between the inputs") {
    auto a = random_tensor({40, 6}, 13, 3.0);
    auto b = random_tensor({40, 6}, 14, 3.0);
    num::Rng rng(15);
    std::vector<double> pv(40);
    for (double& p : pv) p = num::uniform01(rng);
    auto f = GrlHead::fuse(a, b, Tensor::from({40, 1}, pv));
    for (std::size_t i = 0; i < 40; ++i) {
      for (std::size_t d = 0; d < 6; ++d) {
        CHECK(f.at(i, d) >= std::min(a.at(i, d), b.at(i, d)) - 1e-15);
        CHECK(f.at(i, d) <= std::max(a.at(i, d), b.at(i, d)) + 1e-15);
        // Separate stores keep the compiler from contracting into an FMA.
        volatile double left = (1.0 - pv[i]) * a.at(i, d);
        volatile double right = pv[i] * b.at(i, d);
        CHECK(f.at(i, d) == left + right);
      }
    }
  }
}

TEST_CASE("classification loss") {
  auto h = make_head(JointMode::sub, 2, 4);
  // Row 0: a confident classifier on class 2; row 1: a uniform one.
  fill(h.wc, 0.0);
  h.wc.mutable_data()[0 * 4 + 2] = 1000.0;
  auto f = Tensor::from({2, 2}, {1, 0, 0, 1});
  const std::vector<kg::Id> gold{2, 1};
  auto confident = h.classification_loss(Tensor::from({1, 2}, {1, 0}), std::vector<kg::Id>{2});
  CHECK(confident.item() == doctest::Approx(0.0).epsilon(1e-12));
  auto uniform = h.classification_loss(Tensor::from({1, 2}, {0, 1}), std::vector<kg::Id>{1});
  CHECK(uniform.item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(h.classification_loss(f, gold).item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  CHECK_THROWS_AS(h.classification_loss(Tensor::from({1, 2}, {0, 1}), std::vector<kg::Id>{4}), ContractError);
}

TEST_CASE("total loss") {
  auto ls = Tensor::scalar(0.5), lc = Tensor::scalar(1.0);
  CHECK(GrlHead::total_loss(ls, lc, 0.0).item() == 0.5);
  CHECK(GrlHead::total_loss(ls, lc, 0.1).item() == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(GrlHead::total_loss(ls, Tensor::scalar(0.0), 1.0).item() == 0.5);
  CHECK_THROWS_AS(GrlHead::total_loss(ls, lc, -0.1), ContractError);
}

TEST_CASE("most similar relation") {
  auto h = make_head(JointMode::sub, 3, 4);
  auto eh = Tensor::from({1, 3}, {1.0, 0.5, -0.2});
  auto et = Tensor::from({1, 3}, {0.2, 0.1, 0.3});
  auto j = h.joint_vector(eh, et);
  SUBCASE("aligned row wins") {
    auto table = random_tensor({5, 3}, 16, 0.1);
    auto d = table.mutable_data();
    for (std::size_t k = 0; k < 3; ++k) d[2 * 3 + k] = 50.0 * j.at(k);
    Tensor alpha;
    CHECK(h.most_similar_relation(eh, et, table, &alpha) == std::vector<kg::Id>{2});
    CHECK(alpha.numel() == 4);
    auto v = h.zero_shot_relation_embedding(eh, et, table, ZeroShotMode::most_similar);
    for (std::size_t k = 0; k < 3; ++k) CHECK(v.at(k) == table.at(2, k));

    SUBCASE("scaling the query keeps the winner") {
      auto scaled = Tensor::from({1, 3}, {3.0, 1.5, -0.6});
      auto scaled_t = Tensor::from({1, 3}, {0.6, 0.3, 0.9});
      CHECK(h.most_similar_relation(scaled, scaled_t, table) == std::vector<kg::Id>{2});
    }
  }
  SUBCASE("identical rows tie to id 0") {
    auto table = Tensor::full({5, 3}, 0.25);
    CHECK(h.most_similar_relation(eh, et, table) == std::vector<kg::Id>{0});
  }
}

TEST_CASE("zero-shot fusion embedding with p forced to one is rk") {
  auto h = make_head(JointMode::concat, 4, 3, "fixed:1");
  auto table = random_tensor({4, 4}, 17);
  auto eh = random_tensor({2, 4}, 18), et = random_tensor({2, 4}, 19);
  auto v = h.zero_shot_relation_embedding(eh, et, table, ZeroShotMode::fusion);
  auto m = h.memory(table);
  auto rk = GrlHead::relational_knowledge(h.knowledge_attention(h.joint_vector(eh, et), m), m);
  CHECK(values(v) == values(rk));
}

TEST_CASE("direct fusion relation") {
  auto table = random_tensor({4, 4}, 20);
  auto eh = random_tensor({2, 4}, 21), et = random_tensor({2, 4}, 22), r = random_tensor({2, 4}, 23);
  auto p0 = make_head(JointMode::concat, 4, 3, "direct:0");
  CHECK(values(p0.direct_fusion_relation(eh, et, r, table)) == values(r));
  auto p1 = make_head(JointMode::concat, 4, 3, "direct:1");
  auto m = p1.memory(table);
  auto rk = GrlHead::relational_knowledge(p1.knowledge_attention(p1.joint_vector(eh, et), m), m);
  CHECK(values(p1.direct_fusion_relation(eh, et, r, table)) == values(rk));
}

TEST_CASE("relation memory aliases the live table") {
  auto h = make_head(JointMode::sub, 3, 3);
  auto table = random_tensor({4, 3}, 24);
  auto j = Tensor::from({1, 3}, {1.0, 2.0, -1.0});
  auto before = values(h.knowledge_attention(j, h.memory(table)));
  auto d = table.mutable_data();
  d[1 * 3 + 0] = 10.0;
  d[1 * 3 + 1] = 10.0;
  auto after = h.knowledge_attention(j, h.memory(table));
  CHECK(after.at(1) > before[1]);
  CHECK(after.at(1) > 0.999);

  SUBCASE("an optimizer step is visible too") {
    auto loss = num::sum(h.memory(table));
    num::backward(loss);
    num::Adam opt({table}, 0.5);
    const auto pre = values(h.knowledge_attention(j, h.memory(table)));
    opt.step();
    CHECK(values(h.knowledge_attention(j, h.memory(table))) != pre);
  }
}

TEST_CASE("end-to-end gradient of the joint objective") {
  // DistMult score loss on a toy query batch plus lambda times the
  // classification loss, through the shared relation table.
  const std::size_t ne = 5, k = 4, d = 3;
  for (auto joint : {JointMode::sub, JointMode::multiply, JointMode::concat}) {
    for (const char* fusion : {"adaptive", "fixed:0.5"}) {
      CAPTURE(joint_name(joint));
      CAPTURE(fusion);
      auto store = scorer::ParameterStore::create(scorer::ModelKind::distmult, ne, k + 1, d, {}, 31);
      auto h = make_head(joint, d, k, fusion, 0.7);
      const std::vector<kg::Triple> batch{{0, 1, 2}, {3, 0, 4}, {2, 3, 1}};
      kg::FilterIndex train;
      for (const auto& t : batch) train.add(t);
      train.finalize();
      auto labels = scorer::label_matrix(batch, train, ne, 0.1);
      std::vector<kg::Id> heads, rels, tails;
      for (const auto& t : batch) {
        heads.push_back(t.head);
        rels.push_back(t.relation);
        tails.push_back(t.tail);
      }
      auto loss_fn = [&] {
        auto eh = scorer::entity_rows(store, heads);
        auto ls = scorer::score_loss(scorer::distmult_scores(eh, scorer::relation_rows(store, rels), store), labels);
        auto fw = h.forward(eh, scorer::entity_rows(store, tails), store.relation, rels);
        return GrlHead::total_loss(ls, h.classification_loss(fw.f, rels), h.config().lambda);
      };
      std::vector<Tensor> params{store.relation, store.entity};
      for (auto& [name, p] : h.named_parameters()) params.push_back(p);
      auto res = testing::grad_check(params, loss_fn);
      CHECK(res.max_rel_error < 1e-3);
      CHECK(res.checked > 30);
    }
  }
}

TEST_CASE("lambda zero leaves the base trajectory bitwise unchanged") {
  const std::size_t ne = 6, k = 4, d = 4;
  const std::vector<kg::Triple> batch{{0, 1, 2}, {3, 0, 4}, {2, 3, 1}, {5, 2, 0}};
  kg::FilterIndex train;
  for (const auto& t : batch) train.add(t);
  train.finalize();
  std::vector<kg::Id> heads, rels, tails;
  for (const auto& t : batch) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  auto labels = scorer::label_matrix(batch, train, ne, 0.1);

  auto run = [&](bool with_grl) {
    auto store = scorer::ParameterStore::create(scorer::ModelKind::distmult, ne, k + 1, d, {}, 41);
    auto h = make_head(JointMode::concat, d, k, "adaptive", 0.0);
    std::vector<Tensor> params;
    for (auto& [n, p] : store.named_parameters()) params.push_back(p);
    if (with_grl) {
      for (auto& [n, p] : h.named_parameters()) params.push_back(p);
    }
    num::Adam opt(params);
    std::vector<double> trace;
    for (int step = 0; step < 3; ++step) {
      auto eh = scorer::entity_rows(store, heads);
      auto ls = scorer::score_loss(scorer::distmult_scores(eh, scorer::relation_rows(store, rels), store), labels);
      trace.push_back(ls.item());
      if (with_grl) {
        auto fw = h.forward(eh, scorer::entity_rows(store, tails), store.relation, rels);
        num::backward(GrlHead::total_loss(ls, h.classification_loss(fw.f, rels), 0.0));
      } else {
        num::backward(ls);
      }
      opt.step();
    }
    trace.insert(trace.end(), store.entity.data().begin(), store.entity.data().end());
    trace.insert(trace.end(), store.relation.data().begin(), store.relation.data().end());
    return trace;
  };
  const auto base = run(false);
  const auto grl = run(true);
  REQUIRE(base.size() == grl.size());
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::memcmp(&base[i], &grl[i], sizeof(double)) == 0);
}

TEST_CASE("configuration parsing") {
  GrlConfig cfg;
  parse_fusion("fixed:0.5", cfg);
  CHECK(cfg.fusion == FusionMode::fixed);
  CHECK(*cfg.fixed_p == 0.5);
  CHECK(fusion_name(cfg) == "fixed:0.5");
  parse_fusion("direct", cfg);
  CHECK(cfg.fusion == FusionMode::direct);
  CHECK(cfg.learned_gate());
  CHECK_THROWS_AS(parse_fusion("fixed", cfg), ConfigError);
  CHECK_THROWS_AS(parse_fusion("fixed:1.2", cfg), ConfigError);
  CHECK_THROWS_AS(parse_fusion("adaptive:0.3", cfg), ConfigError);
  CHECK_THROWS_AS(parse_fusion("gated", cfg), ConfigError);
  CHECK_THROWS_AS(parse_joint("add"), ConfigError);
  GrlConfig neg;
  neg.lambda = -1;
  CHECK_THROWS_AS(GrlHead::create(neg, 4, 2, 1), ConfigError);
}
