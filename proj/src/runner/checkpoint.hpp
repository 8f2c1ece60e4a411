#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kgdata/knowledge_graph.hpp"
#include "runner/config.hpp"
#include "runner/model.hpp"

namespace kglp::run {

inline constexpr int kCheckpointVersion = 1;

/// Header line of a checkpoint file.
struct CheckpointHeader {
  int format_version = kCheckpointVersion;
  std::string kind;
  bool grl = false;
  std::size_t dim = 0;
  std::size_t num_entities = 0;
  std::size_t num_classes = 0;
  std::uint64_t entity_hash = 0;
  std::uint64_t relation_hash = 0;
  std::map<std::string, std::string> config;
  std::vector<std::string> entities;
  std::vector<std::string> relations;
};

struct Checkpoint {
  CheckpointHeader header;
  LinkModel model;
};

/// One JSON header line, then for every state tensor a line
/// `param <name> <rank> <dims...>` followed by little-endian float32 values.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const LinkModel& model, const kg::KnowledgeGraph& kg,
                     const RunConfig& cfg);

/// Rebuilds the model described by the header and fills its tensors.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws DataError unless the checkpoint vocabularies hash to those of `kg`.
void check_vocabulary(const CheckpointHeader& header, const kg::KnowledgeGraph& kg);

}  // namespace kglp::run
