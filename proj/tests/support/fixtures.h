#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "boolgen/cli.h"
#include "boolgen/corpus.h"
#include "boolgen/llm.h"
#include "boolgen/pipeline.h"
#include "boolgen/query.h"

namespace boolgen::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "boolgen");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);

// Source tree root, for fixtures checked into the repository.
std::filesystem::path source_dir();

// Small random corpora and queries over a shared vocabulary, sized so that
// random terms hit a useful fraction of the documents.
class RandomCorpus {
 public:
  explicit RandomCorpus(std::uint64_t seed) : rng_(seed) {}

  std::vector<Document> documents(std::size_t n);
  MeshHierarchy hierarchy() const;
  QueryPtr query(int max_depth);
  Date date();
  std::mt19937_64& rng() { return rng_; }

 private:
  QueryPtr term();
  std::string pick(const std::vector<std::string>& from);

  std::mt19937_64 rng_;
};


// The sixteen published queries, one per line.
std::vector<std::string> golden_queries();

struct Mutation {
  std::string text;
  Rule expected;
  std::string description;
};

// Every single-edit mutation of `query`: each closing bracket deleted, each
// operator doubled, and one dangling operator prefixed.
std::vector<Mutation> rule_mutations(const std::string& query);


// Minimal in-memory templates for every prompt id.
PromptRegistry simple_prompts();

// Rabies-themed topic with a handful of documents, all dated before the
// topic's search date except one.
struct RetryWorld {
  RetryWorld();
  CorpusIndex index;
  Topic topic;
  PromptRegistry prompts = simple_prompts();
};

// `failures` rule-invalid outputs (each extracting to a distinct query)
// followed by one valid query, as a scripted backend.
std::shared_ptr<ScriptedBackend> failing_then_valid(int failures);
std::string malformed_query(int i);
inline constexpr const char* kValidQuery = "rabies[tiab] AND vaccine[tiab]";

// Three seeds whose per-seed queries cover different parts of the relevant
// set, with the seed documents themselves in the corpus.
struct GuidedWorld {
  GuidedWorld();
  CorpusIndex index;
  Topic topic;
  std::set<std::string> relevant;
  PromptRegistry prompts = simple_prompts();
  std::shared_ptr<ScriptedBackend> backend;
  // seed pmid -> the query the backend writes for it
  std::map<std::string, std::string> seed_queries;

  double recall_of(const std::string& query) const;
  std::set<std::string> retrieve(const std::string& query) const;
};


// Copies the demo config into `dir` with absolute input paths and
// `dir/runs` as the output directory. Returns the new config path.
std::filesystem::path write_demo_config(const std::filesystem::path& dir,
                                        const std::string& run_id = "demo");

// Runs the CLI with the given arguments; stdout/stderr are captured.
struct CliResult {
  int code;
  std::string out;
  std::string err;
};
CliResult run_cli_captured(const std::vector<std::string>& args);
CliResult run_cli_captured(const std::vector<std::string>& args, const CliServices& services);

// Every regular file under `root`, relative path -> contents.
std::map<std::string, std::string> snapshot_tree(const std::filesystem::path& root);

}  // namespace boolgen::testing
