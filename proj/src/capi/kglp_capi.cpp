#include "kglp/kglp.h"

#include <string>
#include <vector>

#include "runner/config.hpp"
#include "runner/verbs.hpp"

struct kglp_session {
  std::filesystem::path config_path;
  std::vector<std::string> overrides;
  bool config_loaded = false;
  kglp_log_fn log = nullptr;
  void* log_user = nullptr;
  std::string result;
  std::string error;
};

namespace {

template <class F>
kglp_status guarded(kglp_session* s, F&& f) {
  if (!s) return KGLP_ERR_INVALID_ARGUMENT;
  s->error.clear();
  try {
    f();
    return KGLP_OK;
  } catch (const kglp::ConfigError& e) {
    s->error = e.what();
    return KGLP_ERR_CONFIG;
  } catch (const kglp::DataError& e) {
    s->error = e.what();
    return KGLP_ERR_DATA;
  } catch (const std::exception& e) {
    s->error = e.what();
    return KGLP_ERR_RUNTIME;
  } catch (...) {
    s->error = "unknown error";
    return KGLP_ERR_RUNTIME;
  }
}

using Verb = std::string (*)(const kglp::run::RunConfig&, const kglp::run::LogSink&);

kglp_status run_verb(kglp_session* s, Verb verb) {
  return guarded(s, [&] {
    const auto cfg = kglp::run::load_config(s->config_path, s->overrides);
    kglp::run::LogSink sink;
    if (s->log) sink = [s](const std::string& line) { s->log(line.c_str(), s->log_user); };
    s->result = verb(cfg, sink);
  });
}

}  // namespace

extern "C" {

const char* kglp_version(void) { return KGLP_VERSION; }

kglp_status kglp_session_create(kglp_session** out) {
  if (!out) return KGLP_ERR_INVALID_ARGUMENT;
  *out = new (std::nothrow) kglp_session();
  return *out ? KGLP_OK : KGLP_ERR_RUNTIME;
}

void kglp_session_destroy(kglp_session* s) { delete s; }

kglp_status kglp_load_config(kglp_session* s, const char* path) {
  if (!path) return KGLP_ERR_INVALID_ARGUMENT;
  return guarded(s, [&] {
    if (s->config_loaded) throw kglp::ConfigError("config already set for this session");
    kglp::run::load_config(path);  // surfaces parse errors now
    s->config_path = path;
    s->config_loaded = true;
  });
}

kglp_status kglp_set(kglp_session* s, const char* key_value) {
  if (!key_value) return KGLP_ERR_INVALID_ARGUMENT;
  return guarded(s, [&] {
    const std::string kv = key_value;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw kglp::ConfigError("--set expects key=value, got '" + kv + "'");
    kglp::run::RunConfig probe;
    auto trim = [](std::string x) {
      x.erase(0, x.find_first_not_of(" \t"));
      x.erase(x.find_last_not_of(" \t") + 1);
      return x;
    };
    kglp::run::apply_setting(probe, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    s->overrides.push_back(kv);
  });
}

kglp_status kglp_set_log(kglp_session* s, kglp_log_fn fn, void* user) {
  if (!s) return KGLP_ERR_INVALID_ARGUMENT;
  s->log = fn;
  s->log_user = user;
  return KGLP_OK;
}

kglp_status kglp_train(kglp_session* s) { return run_verb(s, kglp::run::run_train); }
kglp_status kglp_eval(kglp_session* s) { return run_verb(s, kglp::run::run_eval); }
kglp_status kglp_zeroshot(kglp_session* s) { return run_verb(s, kglp::run::run_zero_shot); }
kglp_status kglp_export(kglp_session* s) { return run_verb(s, kglp::run::run_export); }
kglp_status kglp_split_stats(kglp_session* s) { return run_verb(s, kglp::run::run_split_stats); }

const char* kglp_result_json(const kglp_session* s) { return s ? s->result.c_str() : ""; }
const char* kglp_last_error(const kglp_session* s) { return s ? s->error.c_str() : "null session"; }

}
