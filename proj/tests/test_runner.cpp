#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "runner/checkpoint.hpp"
#include "runner/config.hpp"
#include "runner/model.hpp"
#include "runner/verbs.hpp"

using namespace kglp;
using namespace kglp::run;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("kglp_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Three triples, one per relation, so every query has a single answer.
const char* kTinyTriples = "a\tr1\tb\nb\tr2\tc\nc\tr3\ta\n";

RunConfig tiny_config(const fs::path& dir) {
  write(dir / "train.txt", kTinyTriples);
  write(dir / "valid.txt", kTinyTriples);
  write(dir / "test.txt", kTinyTriples);
  RunConfig cfg;
  cfg.train_path = dir / "train.txt";
  cfg.valid_path = dir / "valid.txt";
  cfg.test_path = dir / "test.txt";
  return cfg;
}

// Twelve entities on a ring. `next` and `also_next` describe the same edges;
// `skip` jumps two places.
RunConfig ring_config(const fs::path& dir) {
  std::ostringstream train, valid, test;
  for (int i = 0; i < 12; ++i) {
    const auto e = [](int k) { return "e" + std::to_string(((k % 12) + 12) % 12); };
    train << e(i) << "\tnext\t" << e(i + 1) << "\n";
    train << e(i) << "\tskip\t" << e(i + 2) << "\n";
    if (i % 2 == 0) train << e(i) << "\talso_next\t" << e(i + 1) << "\n";
    (i % 3 == 0 ? valid : test) << e(i) << "\talso_next\t" << e(i + 1) << "\n";
    if (i % 4 == 1) valid << e(i) << "\tskip\t" << e(i + 2) << "\n";
  }
  write(dir / "train.txt", train.str());
  write(dir / "valid.txt", valid.str());
  write(dir / "test.txt", test.str());
  RunConfig cfg;
  cfg.train_path = dir / "train.txt";
  cfg.valid_path = dir / "valid.txt";
  cfg.test_path = dir / "test.txt";
  cfg.dim = 16;
  cfg.transe_dim = 16;
  cfg.epochs = 20;
  return cfg;
}

std::string without_created(const std::string& json) {
  std::istringstream in(json);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find("\"created\"") == std::string::npos) out += line + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config(
      "# comment\n"
      "dataset_dir = data/kin   # trailing comment\n"
      "model = conve\n"
      "grl = true\n"
      "fusion_mode = fixed:0.5\n"
      "\n"
      "lambda = 0.25\n",
      "inline", "/base");
  CHECK(cfg.train_path == fs::path("/base/data/kin/train.txt"));
  CHECK(cfg.test_path == fs::path("/base/data/kin/test.txt"));
  CHECK(cfg.model == scorer::ModelKind::conve);
  CHECK(cfg.grl);
  CHECK(cfg.grl_cfg.fusion == grl::FusionMode::fixed);
  CHECK(*cfg.grl_cfg.fixed_p == 0.5);
  CHECK(cfg.grl_cfg.lambda == 0.25);
  // untouched defaults
  CHECK(cfg.dim == 200);
  CHECK(cfg.lr == 0.003);
  CHECK(cfg.batch_size == 128);
  CHECK(cfg.label_smoothing == 0.1);
  CHECK(cfg.many_fraction == 0.2);
  CHECK(cfg.eval_every == 5);
  CHECK(cfg.patience == 10);
  CHECK(cfg.epochs == 1000);

  SUBCASE("errors carry origin and line") {
    try {
      parse_config("dim = 10\nbogus = 3\n", "x.conf");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("x.conf:2") != std::string::npos);
      CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
  }
  SUBCASE("bad values") {
    RunConfig c;
    CHECK_THROWS_AS(apply_setting(c, "dim", "0"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "dim", "-3"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "lr", "0"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "lr", "fast"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "label_smoothing", "1.5"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "many_fraction", "nan"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "grl", "maybe"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "model", "rescal"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "fusion_mode", "fixed:1.5"), ConfigError);
    CHECK_THROWS_AS(apply_setting(c, "zero_shot_modes", ""), ConfigError);
  }
  SUBCASE("cross-field checks") {
    auto c = parse_config("model = conve\ndim = 100\n");
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = parse_config("model = transe\ngrl = true\n");
    CHECK_THROWS_AS(validate(c), ConfigError);
    CHECK_NOTHROW(validate(parse_config("model = conve\ndim = 200\n")));
  }
  SUBCASE("overrides") {
    const auto dir = scratch("overrides");
    write(dir / "run.conf", "model = distmult\nseed = 4\n");
    const auto c = load_config(dir / "run.conf", {"seed=9", "grl = true"});
    CHECK(c.seed == 9);
    CHECK(c.grl);
    CHECK_THROWS_AS(load_config(dir / "run.conf", {"seed"}), ConfigError);
    CHECK_THROWS_AS(load_config(dir / "missing.conf"), ConfigError);
  }
}

TEST_CASE("tiny graph overfits") {
  auto cfg = tiny_config(scratch("overfit"));
  cfg.epochs = 200;
  cfg.patience = 1000;  // run all 200 epochs
  // With smoothed targets the loss floor sits above 0.1.
  cfg.label_smoothing = 0.0;
  const auto kg = load_graph(cfg);
  auto model = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  const auto result = train_model(model, kg, cfg, {});
  CHECK(result.epochs_run == 200);
  CHECK(result.log.back().score_loss < 0.1);

  const auto report = eval::evaluate_split(model.query_scorer(), kg, kg::Split::test, kg::frequency_split(kg));
  REQUIRE(report.per_query.size() == 6);
  for (const auto& q : report.per_query) CHECK(q.rank == 1.0);
  CHECK(report.all.mrr == 1.0);
}

TEST_CASE("lambda zero leaves the score-loss trace unchanged") {
  auto cfg = ring_config(scratch("lambda0"));
  const auto kg = load_graph(cfg);
  auto base = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  const auto a = train_model(base, kg, cfg, {});

  cfg.grl = true;
  cfg.grl_cfg.lambda = 0.0;
  auto with_head = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  const auto b = train_model(with_head, kg, cfg, {});

  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].score_loss == b.log[i].score_loss);
    CHECK(a.log[i].val_mrr == b.log[i].val_mrr);
  }
  CHECK(b.log.back().class_loss > 0.0);  // the head still reports L_c
}

TEST_CASE("training is deterministic") {
  auto cfg = ring_config(scratch("determinism"));
  cfg.grl = true;
  const auto kg = load_graph(cfg);
  std::vector<std::string> logs[2];
  for (auto& lines : logs) {
    auto model = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
    train_model(model, kg, cfg, [&](const std::string& l) { lines.push_back(l); });
  }
  CHECK(logs[0].size() == cfg.epochs);
  CHECK(logs[0] == logs[1]);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto cfg = tiny_config(scratch("nan"));
  const auto kg = load_graph(cfg);
  auto model = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  model.store.entity.mutable_data()[0] = std::nan("");
  try {
    train_model(model, kg, cfg, {});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("L_s") != std::string::npos);
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  for (const char* model_name : {"distmult", "conve"}) {
    CAPTURE(model_name);
    const auto dir = scratch(std::string("ckpt_") + model_name);
    auto cfg = ring_config(dir);
    cfg.model = scorer::parse_model(model_name);
    cfg.grl = true;
    if (cfg.model == scorer::ModelKind::conve) {
      cfg.conve.height = 4;
      cfg.conve.width = 4;
      cfg.conve.filters = 4;
      cfg.epochs = 10;
    }
    const auto kg = load_graph(cfg);
    auto model = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
    train_model(model, kg, cfg, {});
    const auto groups = kg::frequency_split(kg);
    const auto before = eval::evaluate_split(model.query_scorer(), kg, kg::Split::test, groups);

    cfg.checkpoint = dir / "model.ckpt";
    save_checkpoint(cfg.checkpoint, model, kg, cfg);
    auto ck = load_checkpoint(cfg.checkpoint);
    CHECK(ck.header.kind == model_name);
    CHECK(ck.header.grl);
    const auto after = evaluate_checkpoint(ck, kg, cfg);
    CHECK(after.all.mrr == before.all.mrr);
    CHECK(after.all.h10 == before.all.h10);
    REQUIRE(after.per_query.size() == before.per_query.size());
    for (std::size_t i = 0; i < after.per_query.size(); ++i) CHECK(after.per_query[i].rank == before.per_query[i].rank);
    CHECK(eval::report_json(after, kg, true).size() == eval::report_json(before, kg, true).size());
  }
}

TEST_CASE("checkpoint validation") {
  const auto dir = scratch("ckpt_errors");
  auto cfg = ring_config(dir);
  cfg.epochs = 5;
  cfg.checkpoint = dir / "model.ckpt";
  run_train(cfg, {});

  SUBCASE("vocabulary mismatch is refused") {
    const auto other = tiny_config(scratch("ckpt_other"));
    const auto kg = load_graph(other);
    auto ck = load_checkpoint(cfg.checkpoint);
    CHECK_THROWS_AS(evaluate_checkpoint(ck, kg, other), DataError);
    auto mismatched = other;
    mismatched.checkpoint = cfg.checkpoint;
    CHECK_THROWS_AS(run_eval(mismatched, {}), DataError);
  }
  SUBCASE("kind and head must match the config") {
    auto c = cfg;
    c.model = scorer::ModelKind::transe;
    CHECK_THROWS_AS(run_eval(c, {}), ConfigError);
    c = cfg;
    c.grl = true;
    CHECK_THROWS_AS(run_eval(c, {}), ConfigError);
    c = cfg;
    c.checkpoint.clear();
    CHECK_THROWS_AS(run_eval(c, {}), ConfigError);
  }
  SUBCASE("truncated file") {
    const auto text = slurp(cfg.checkpoint);
    write(dir / "cut.ckpt", text.substr(0, text.size() - 40));
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), DataError);
    write(dir / "garbage.ckpt", "not json\n");
    CHECK_THROWS_AS(load_checkpoint(dir / "garbage.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), DataError);
  }
}

TEST_CASE("eval reports") {
  const auto dir = scratch("eval");
  auto cfg = ring_config(dir);
  cfg.grl = true;
  cfg.checkpoint = dir / "model.ckpt";
  run_train(cfg, {});

  cfg.report = dir / "a.json";
  std::vector<std::string> lines;
  run_eval(cfg, [&](const std::string& l) { lines.push_back(l); });
  cfg.report = dir / "b.json";
  run_eval(cfg, {});
  const auto a = slurp(dir / "a.json"), b = slurp(dir / "b.json");
  CHECK(a.find("\"created\"") != std::string::npos);
  CHECK(without_created(a) == without_created(b));
  CHECK(lines.size() == 3);

  const auto j = nlohmann::json::parse(a);
  const auto total = j["metrics"]["queries"].get<std::size_t>();
  CHECK(total == load_graph(cfg).test.size());  // inverse copies included
  CHECK(j["groups"]["many"]["queries"].get<std::size_t>() + j["groups"]["few"]["queries"].get<std::size_t>() == total);
}

TEST_CASE("export") {
  const auto dir = scratch("export");
  auto cfg = ring_config(dir);
  cfg.checkpoint = dir / "model.ckpt";
  cfg.export_path = dir / "relations.tsv";
  cfg.export_entities_path = dir / "entities.tsv";
  run_train(cfg, {});
  run_export(cfg, {});

  const auto kg = load_graph(cfg);
  auto ck = load_checkpoint(cfg.checkpoint);
  auto parse_rows = [&](const fs::path& p) {
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream f(line);
      std::string name, v;
      std::getline(f, name, '\t');
      std::vector<double> vals;
      while (std::getline(f, v, '\t')) vals.push_back(static_cast<double>(std::stof(v)));
      rows.emplace_back(name, vals);
    }
    return rows;
  };
  const auto rel = parse_rows(cfg.export_path);
  REQUIRE(rel.size() == kg.num_classes() + 1);
  CHECK(rel.back().first == kg::kUnkRelation);
  CHECK(rel[0].second.size() == cfg.dim);
  const auto ent = parse_rows(cfg.export_entities_path);
  REQUIRE(ent.size() == kg.num_entities());

  // Rebuild a model from the exported text alone; biases are not exported.
  auto fresh = LinkModel::create(cfg, kg.num_entities(), kg.num_classes());
  auto fill = [](num::Tensor& t, const auto& rows) {
    auto d = t.mutable_data();
    const std::size_t dim = t.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].second.begin(), rows[r].second.end(), d.begin() + r * dim);
  };
  fill(fresh.store.relation, rel);
  fill(fresh.store.entity, ent);
  const auto bias = ck.model.store.entity_bias.data();
  std::copy(bias.begin(), bias.end(), fresh.store.entity_bias.mutable_data().begin());

  std::vector<kg::Id> heads, rels;
  for (const auto& t : kg.test) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
  }
  const auto expected = ck.model.score_queries(heads, rels);
  const auto got = fresh.score_queries(heads, rels);
  const auto x = expected.data(), y = got.data();
  REQUIRE(x.size() == y.size());
  bool same = true;
  for (std::size_t i = 0; i < x.size(); ++i) same = same && static_cast<float>(x[i]) == static_cast<float>(y[i]);
  CHECK(same);
}

TEST_CASE("zero-shot probe") {
  const auto dir = scratch("zeroshot");
  auto full = ring_config(dir);
  full.model = scorer::ModelKind::transe;
  full.checkpoint = dir / "transe.ckpt";
  run_train(full, {});

  auto cfg = ring_config(dir);
  cfg.grl = true;
  cfg.withhold_relations = {"also_next"};
  cfg.checkpoint = dir / "grl.ckpt";
  run_train(cfg, {});

  cfg.transe_checkpoint = full.checkpoint;
  cfg.report = dir / "zs.json";
  cfg.zero_shot_table = dir / "zs_table.tsv";
  const auto summary = nlohmann::json::parse(run_zero_shot(cfg, {}));
  CHECK(summary["triples"].get<std::size_t>() == 8);  // the test-file copies of also_next
  CHECK(fs::exists(cfg.zero_shot_table));

  const auto j = nlohmann::json::parse(slurp(cfg.report));
  CHECK_FALSE(j.contains("metrics"));
  for (const char* mode : {"fusion", "most_similar"}) {
    CAPTURE(mode);
    REQUIRE(j["zero_shot"].contains(mode));
    const auto& z = j["zero_shot"][mode];
    CHECK(z.contains("baseline_score"));
    CHECK(z["triples"].get<std::size_t>() == 8);
    CHECK(z["similarity_pairs"].get<std::size_t>() == 8);
    CHECK(z["mean_score"].get<double>() > 0.0);
  }

  // Second run reads the side table back.
  cfg.report = dir / "zs2.json";
  run_zero_shot(cfg, {});
  CHECK(without_created(slurp(dir / "zs.json")) == without_created(slurp(dir / "zs2.json")));

  SUBCASE("errors") {
    auto c = cfg;
    c.zero_shot_table.clear();
    c.zero_shot_source = dir / "train.txt";  // only trained relations besides also_next
    c.withhold_relations = {"also_next", "next", "skip"};
    CHECK_THROWS(run_zero_shot(c, {}));
    c = cfg;
    c.transe_checkpoint = cfg.checkpoint;
    CHECK_THROWS_AS(run_zero_shot(c, {}), ConfigError);
    c = cfg;
    c.grl = false;
    CHECK_THROWS_AS(run_zero_shot(c, {}), ConfigError);
  }
}

TEST_CASE("split statistics") {
  auto cfg = ring_config(scratch("stats"));
  const auto j = nlohmann::json::parse(run_split_stats(cfg, {}));
  CHECK(j["base_relations"] == 3);
  CHECK(j["entities"] == 12);
  CHECK(j["many_shot"].size() == 1);  // ceil(0.2 * 3)
  CHECK(j["few_shot"].size() == 2);
  CHECK(j["many_shot"][0]["train_triples"] == 12);

  RunConfig missing;
  CHECK_THROWS_AS(run_split_stats(missing, {}), ConfigError);
  cfg.train_path = cfg.train_path.parent_path() / "nope.txt";
  CHECK_THROWS_AS(run_split_stats(cfg, {}), DataError);
}
