#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "grl/head.hpp"
#include "scorers/scorers.hpp"

namespace kglp::run {

/// Every run setting. Defaults are the standard Kinship settings, so a
/// minimal config names only the dataset.
struct RunConfig {
  std::filesystem::path train_path, valid_path, test_path;

  scorer::ModelKind model = scorer::ModelKind::distmult;
  std::size_t dim = 200;
  scorer::ConvEConfig conve;

  bool grl = false;
  grl::GrlConfig grl_cfg;

  double lr = 0.003;
  std::size_t batch_size = 128;
  std::size_t epochs = 1000;
  std::size_t eval_every = 5;
  std::size_t patience = 10;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  double many_fraction = 0.2;
  std::size_t eval_batch_size = 256;

  std::size_t transe_dim = 100;
  double transe_margin = 1.0;
  std::size_t transe_negatives = 1;

  std::set<std::string> withhold_relations;

  std::filesystem::path checkpoint;  // written by train, read by the other verbs
  std::filesystem::path report;      // eval/zeroshot/split-stats JSON
  bool per_query = false;

  std::filesystem::path transe_checkpoint;
  std::filesystem::path zero_shot_table;   // side table; built when missing
  std::filesystem::path zero_shot_source;  // raw triples to draw from (default: test file)
  std::size_t zero_shot_count = 0;         // 0 takes every qualifying triple
  std::vector<grl::ZeroShotMode> zero_shot_modes{grl::ZeroShotMode::fusion, grl::ZeroShotMode::most_similar};

  std::filesystem::path export_path;
  std::filesystem::path export_entities_path;  // optional
  std::filesystem::path attention_path;        // optional, written after training
  std::size_t attention_samples = 200;

  /// Embedding width of the model being run.
  std::size_t model_dim() const { return model == scorer::ModelKind::transe ? transe_dim : dim; }

  /// Canonical key -> value text of every setting, for checkpoint headers.
  std::map<std::string, std::string> echo() const;
};

/// Applies one `key = value` setting. Unknown keys and bad values throw
/// ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses the line-oriented format: `key = value`, `#` comments, blank lines.
/// Relative paths resolve against `base_dir`.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                       const std::filesystem::path& base_dir = {});

/// Reads `path` (may be empty for pure overrides) and applies `overrides`
/// given as `key=value`.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Checks cross-field constraints (paths present for the verb are checked by
/// the verb itself).
void validate(const RunConfig& cfg);

}  // namespace kglp::run
