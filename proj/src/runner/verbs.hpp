#pragma once

#include <filesystem>
#include <string>

#include "evalrank/ranking.hpp"
#include "kgdata/knowledge_graph.hpp"
#include "runner/checkpoint.hpp"
#include "runner/config.hpp"
#include "runner/model.hpp"

namespace kglp::run {

/// Loads the three splits named by `cfg`, drops withheld relations and adds
/// inverses. Missing paths are a ConfigError; unreadable files a DataError.
kg::KnowledgeGraph load_graph(const RunConfig& cfg);

/// Writes `text` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

/// Each verb returns a one-line JSON summary and sends progress lines to `log`.
std::string run_train(const RunConfig& cfg, const LogSink& log);
std::string run_eval(const RunConfig& cfg, const LogSink& log);
std::string run_zero_shot(const RunConfig& cfg, const LogSink& log);
std::string run_export(const RunConfig& cfg, const LogSink& log);
std::string run_split_stats(const RunConfig& cfg, const LogSink& log);

/// Test-split ranking of a loaded model; the checkpoint kind must match `cfg`.
eval::RankingReport evaluate_checkpoint(Checkpoint& ck, const kg::KnowledgeGraph& kg, const RunConfig& cfg);

/// Zero-shot report for a trained GRL model against a TransE reference.
eval::RankingReport zero_shot_probe(LinkModel& model, const kg::KnowledgeGraph& kg, const kg::ZeroShotSplit& split,
                                    const Checkpoint& transe, const RunConfig& cfg);

}  // namespace kglp::run
