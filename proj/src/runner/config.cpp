#include "runner/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace kglp::run {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v, std::size_t min_value = 0) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (out < min_value) throw ConfigError(key + ": must be >= " + std::to_string(min_value));
  return out;
}

double to_double(const std::string& key, const std::string& v, double lo, double hi, bool lo_open = false) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (out < lo || out > hi || (lo_open && out == lo)) {
    std::ostringstream msg;
    msg << key << ": " << out << " outside " << (lo_open ? "(" : "[") << lo << ", " << hi << "]";
    throw ConfigError(msg.str());
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["dataset_dir"] = [](RunConfig& c, const std::string&, const std::string& v) {
      const std::filesystem::path d(v);
      c.train_path = d / "train.txt";
      c.valid_path = d / "valid.txt";
      c.test_path = d / "test.txt";
    };
    t["train"] = [](RunConfig& c, const std::string&, const std::string& v) { c.train_path = v; };
    t["valid"] = [](RunConfig& c, const std::string&, const std::string& v) { c.valid_path = v; };
    t["test"] = [](RunConfig& c, const std::string&, const std::string& v) { c.test_path = v; };
    t["model"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model = scorer::parse_model(v); };
    t["dim"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.dim = to_size(k, v, 1); };
    t["conve_height"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.conve.height = to_size(k, v, 1); };
    t["conve_width"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.conve.width = to_size(k, v, 1); };
    t["conve_filters"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.conve.filters = to_size(k, v, 1); };
    t["conve_kernel"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.conve.kernel = to_size(k, v, 1); };
    t["input_dropout"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.conve.input_dropout = to_double(k, v, 0.0, 0.99);
    };
    t["feature_dropout"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.conve.feature_dropout = to_double(k, v, 0.0, 0.99);
    };
    t["hidden_dropout"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.conve.hidden_dropout = to_double(k, v, 0.0, 0.99);
    };
    t["grl"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.grl = to_bool(k, v); };
    t["joint_mode"] = [](RunConfig& c, const std::string&, const std::string& v) { c.grl_cfg.joint = grl::parse_joint(v); };
    t["fusion_mode"] = [](RunConfig& c, const std::string&, const std::string& v) { grl::parse_fusion(v, c.grl_cfg); };
    t["mask_mode"] = [](RunConfig& c, const std::string&, const std::string& v) { c.grl_cfg.mask = grl::parse_mask(v); };
    t["lambda"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.grl_cfg.lambda = to_double(k, v, 0.0, 1e6);
    };
    t["lr"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = to_double(k, v, 0.0, 10.0, true); };
    t["batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_size(k, v, 1); };
    t["epochs"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = to_size(k, v, 1); };
    t["eval_every"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_every = to_size(k, v, 1); };
    t["patience"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.patience = to_size(k, v, 1); };
    t["label_smoothing"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.label_smoothing = to_double(k, v, 0.0, 0.99);
    };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_size(k, v); };
    t["many_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.many_fraction = to_double(k, v, 0.0, 1.0);
    };
    t["eval_batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.eval_batch_size = to_size(k, v, 1);
    };
    t["transe_dim"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.transe_dim = to_size(k, v, 1); };
    t["transe_margin"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.transe_margin = to_double(k, v, 0.0, 1e6, true);
    };
    t["transe_negatives"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.transe_negatives = to_size(k, v, 1);
    };
    t["withhold_relations"] = [](RunConfig& c, const std::string&, const std::string& v) {
      const auto items = split_list(v);
      c.withhold_relations = {items.begin(), items.end()};
    };
    t["checkpoint"] = [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; };
    t["report"] = [](RunConfig& c, const std::string&, const std::string& v) { c.report = v; };
    t["per_query"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.per_query = to_bool(k, v); };
    t["transe_checkpoint"] = [](RunConfig& c, const std::string&, const std::string& v) { c.transe_checkpoint = v; };
    t["zero_shot_table"] = [](RunConfig& c, const std::string&, const std::string& v) { c.zero_shot_table = v; };
    t["zero_shot_source"] = [](RunConfig& c, const std::string&, const std::string& v) { c.zero_shot_source = v; };
    t["zero_shot_count"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.zero_shot_count = to_size(k, v);
    };
    t["zero_shot_modes"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.zero_shot_modes.clear();
      for (const auto& m : split_list(v)) c.zero_shot_modes.push_back(grl::parse_zero_shot_mode(m));
      if (c.zero_shot_modes.empty()) throw ConfigError(k + ": at least one mode required");
    };
    t["export_path"] = [](RunConfig& c, const std::string&, const std::string& v) { c.export_path = v; };
    t["export_entities_path"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.export_entities_path = v;
    };
    t["attention_path"] = [](RunConfig& c, const std::string&, const std::string& v) { c.attention_path = v; };
    t["attention_samples"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.attention_samples = to_size(k, v, 1);
    };
    return t;
  }();
  return table;
}

const std::set<std::string> kPathKeys = {"dataset_dir", "train", "valid", "test", "checkpoint", "report",
                                         "transe_checkpoint", "zero_shot_table", "zero_shot_source",
                                         "export_path", "export_entities_path", "attention_path"};

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_config(const std::string& text, const std::string& origin, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (kPathKeys.contains(key) && !value.empty() && !base_dir.empty() && std::filesystem::path(value).is_relative()) {
      value = (base_dir / value).lexically_normal().string();
    }
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    cfg = parse_config(buf.str(), path.string(), path.parent_path());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    apply_setting(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

void validate(const RunConfig& cfg) {
  if (cfg.model == scorer::ModelKind::conve && cfg.conve.height * cfg.conve.width != cfg.dim) {
    throw ConfigError("conve: dim " + std::to_string(cfg.dim) + " must equal conve_height * conve_width (" +
                      std::to_string(cfg.conve.height) + " * " + std::to_string(cfg.conve.width) + ")");
  }
  if (cfg.grl && cfg.model == scorer::ModelKind::transe) throw ConfigError("grl: not available for the transe model");
  if (cfg.grl_cfg.fusion == grl::FusionMode::fixed && !cfg.grl_cfg.fixed_p) {
    throw ConfigError("fusion_mode fixed needs a probability, e.g. fixed:0.5");
  }
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> e;
  e["train"] = train_path.string();
  e["valid"] = valid_path.string();
  e["test"] = test_path.string();
  e["model"] = scorer::model_name(model);
  e["dim"] = std::to_string(dim);
  e["transe_dim"] = std::to_string(transe_dim);
  e["conve_height"] = std::to_string(conve.height);
  e["conve_width"] = std::to_string(conve.width);
  e["conve_filters"] = std::to_string(conve.filters);
  e["conve_kernel"] = std::to_string(conve.kernel);
  e["input_dropout"] = fmt(conve.input_dropout);
  e["feature_dropout"] = fmt(conve.feature_dropout);
  e["hidden_dropout"] = fmt(conve.hidden_dropout);
  e["grl"] = grl ? "true" : "false";
  e["joint_mode"] = grl::joint_name(grl_cfg.joint);
  e["fusion_mode"] = grl::fusion_name(grl_cfg);
  e["mask_mode"] = grl::mask_name(grl_cfg.mask);
  e["lambda"] = fmt(grl_cfg.lambda);
  e["lr"] = fmt(lr);
  e["batch_size"] = std::to_string(batch_size);
  e["epochs"] = std::to_string(epochs);
  e["eval_every"] = std::to_string(eval_every);
  e["patience"] = std::to_string(patience);
  e["label_smoothing"] = fmt(label_smoothing);
  e["seed"] = std::to_string(seed);
  e["many_fraction"] = fmt(many_fraction);
  e["transe_margin"] = fmt(transe_margin);
  e["transe_negatives"] = std::to_string(transe_negatives);
  std::string withheld;
  for (const auto& r : withhold_relations) withheld += (withheld.empty() ? "" : ",") + r;
  e["withhold_relations"] = withheld;
  return e;
}

}  // namespace kglp::run
