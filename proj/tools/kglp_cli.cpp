// Command-line front end; talks to the library only through kglp.h.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kglp/kglp.h"

namespace {

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

int report_failure(kglp_session* s, kglp_status st) {
  std::fprintf(stderr, "error: %s\n", kglp_last_error(s));
  return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph link prediction with relation-memory heads"};
  app.set_version_flag("--version", std::string(kglp_version()));
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  struct Verb {
    const char* name;
    const char* help;
    kglp_status (*fn)(kglp_session*);
  };
  const Verb verbs[] = {
      {"train", "train a model and write its checkpoint", kglp_train},
      {"eval", "rank the test split with a checkpoint and write a report", kglp_eval},
      {"zeroshot", "score withheld-relation triples with substituted relation vectors", kglp_zeroshot},
      {"export", "write relation (and optionally entity) vectors as TSV", kglp_export},
      {"split-stats", "print the many-shot / few-shot relation groups", kglp_split_stats},
  };
  std::vector<std::pair<CLI::App*, const Verb*>> subs;
  for (const auto& v : verbs) {
    auto* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("--config", config, "config file (key = value lines)");
    sub->add_option("--set", sets, "override one setting, key=value (repeatable)")->take_all();
    subs.emplace_back(sub, &v);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  kglp_session* s = nullptr;
  if (kglp_session_create(&s) != KGLP_OK) return 1;
  kglp_set_log(s, print_line, nullptr);
  kglp_status st = KGLP_OK;
  if (!config.empty()) st = kglp_load_config(s, config.c_str());
  for (std::size_t i = 0; st == KGLP_OK && i < sets.size(); ++i) st = kglp_set(s, sets[i].c_str());
  if (st == KGLP_OK) {
    for (const auto& [sub, verb] : subs) {
      if (sub->parsed()) st = verb->fn(s);
    }
  }
  const int rc = st == KGLP_OK ? 0 : report_failure(s, st);
  kglp_session_destroy(s);
  return rc;
}
