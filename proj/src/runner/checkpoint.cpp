#include "runner/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kglp::run {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

std::uint64_t from_hex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw DataError("checkpoint: bad hash '" + s + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const LinkModel& model, const kg::KnowledgeGraph& kg,
                     const RunConfig& cfg) {
  nlohmann::ordered_json h;
  h["format_version"] = kCheckpointVersion;
  h["kind"] = scorer::model_name(model.store.kind);
  h["grl"] = model.head.has_value();
  h["dim"] = model.store.dim;
  h["num_entities"] = kg.num_entities();
  h["num_classes"] = kg.num_classes();
  h["entity_hash"] = hex(kg.entity_hash());
  h["relation_hash"] = hex(kg.relation_hash());
  h["config"] = cfg.echo();
  h["entities"] = kg.entities.names();
  h["relations"] = kg.relations.names();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + tmp);
    out << h.dump() << '\n';
    std::vector<float> buf;
    for (const auto& [name, t] : model.named_state()) {
      out << "param " << name << ' ' << t.rank();
      for (auto d : t.shape()) out << ' ' << d;
      out << '\n';
      buf.assign(t.data().begin(), t.data().end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      out << '\n';
    }
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty checkpoint");

  Checkpoint ck;
  auto& h = ck.header;
  try {
    const auto j = nlohmann::json::parse(line);
    h.format_version = j.at("format_version").get<int>();
    if (h.format_version != kCheckpointVersion) {
      throw DataError(path.string() + ": unsupported checkpoint format " + std::to_string(h.format_version));
    }
    h.kind = j.at("kind").get<std::string>();
    h.grl = j.at("grl").get<bool>();
    h.dim = j.at("dim").get<std::size_t>();
    h.num_entities = j.at("num_entities").get<std::size_t>();
    h.num_classes = j.at("num_classes").get<std::size_t>();
    h.entity_hash = from_hex(j.at("entity_hash").get<std::string>());
    h.relation_hash = from_hex(j.at("relation_hash").get<std::string>());
    h.config = j.at("config").get<std::map<std::string, std::string>>();
    h.entities = j.at("entities").get<std::vector<std::string>>();
    h.relations = j.at("relations").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (h.entities.size() != h.num_entities || h.relations.size() != h.num_classes + 1) {
    throw DataError(path.string() + ": vocabulary sizes disagree with the header");
  }

  // The structural settings come from the echoed config.
  RunConfig cfg;
  try {
    for (const auto& key : {"model", "dim", "transe_dim", "conve_height", "conve_width", "conve_filters",
                            "conve_kernel", "input_dropout", "feature_dropout", "hidden_dropout", "grl", "joint_mode",
                            "fusion_mode", "mask_mode", "lambda", "seed"}) {
      const auto it = h.config.find(key);
      if (it == h.config.end()) throw DataError(path.string() + ": header config lacks '" + key + "'");
      apply_setting(cfg, key, it->second);
    }
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": bad config echo: " + e.what());
  }
  if (scorer::model_name(cfg.model) != h.kind || cfg.grl != h.grl || cfg.model_dim() != h.dim) {
    throw DataError(path.string() + ": header fields disagree with the config echo");
  }
  ck.model = LinkModel::create(cfg, h.num_entities, h.num_classes);

  std::map<std::string, num::Tensor> expected;
  for (auto& [name, t] : ck.model.named_state()) expected.emplace(name, t);
  std::vector<float> buf;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string tag, name;
    std::size_t rank = 0;
    fields >> tag >> name >> rank;
    if (tag != "param" || !fields) throw DataError(path.string() + ": malformed block header '" + line + "'");
    num::Shape shape(rank);
    for (auto& d : shape) fields >> d;
    if (!fields) throw DataError(path.string() + ": malformed shape for " + name);
    const auto it = expected.find(name);
    if (it == expected.end()) throw DataError(path.string() + ": unexpected tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw DataError(path.string() + ": tensor " + name + " has shape " + num::shape_str(shape) + ", expected " +
                      num::shape_str(it->second.shape()));
    }
    buf.resize(num::shape_numel(shape));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated data for " + name);
    auto data = it->second.mutable_data();
    for (std::size_t k = 0; k < buf.size(); ++k) data[k] = static_cast<double>(buf[k]);
    expected.erase(it);
  }
  if (!expected.empty()) throw DataError(path.string() + ": missing tensor '" + expected.begin()->first + "'");
  return ck;
}

void check_vocabulary(const CheckpointHeader& header, const kg::KnowledgeGraph& kg) {
  if (header.entity_hash != kg.entity_hash() || header.relation_hash != kg.relation_hash()) {
    throw DataError("checkpoint vocabulary hash mismatch: the checkpoint was trained on a different dataset (entities " +
                    std::to_string(header.num_entities) + " vs " + std::to_string(kg.num_entities()) +
                    ", relation classes " + std::to_string(header.num_classes) + " vs " +
                    std::to_string(kg.num_classes()) + ")");
  }
}

}  // namespace kglp::run
