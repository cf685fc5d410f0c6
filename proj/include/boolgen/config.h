#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "boolgen/corpus.h"
#include "boolgen/entrez.h"
#include "boolgen/llm.h"
#include "boolgen/pipeline.h"
#include "json.hpp"

namespace boolgen {

// One generation backend. `type` is "http" (OpenAI-compatible endpoint),
// "scripted" (canned responses), or "replay" (recorded completions, falling
// through to the HTTP endpoint when one is configured).
struct BackendSpec {
  std::string id;
  std::string type = "http";
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  bool sampling_params = true;
  GenerationConfig generation;
  // scripted
  std::vector<ScriptedBackend::Step> responses;
  std::vector<std::pair<std::string, std::vector<ScriptedBackend::Step>>> keyed_responses;
  bool cycle = false;
  // replay
  std::filesystem::path replay_dir;
};

struct CollectionSpec {
  std::string name;
  std::filesystem::path documents;
  DocumentFormat documents_format = DocumentFormat::kJsonl;
  std::filesystem::path topics;
  TopicCollection topic_collection = TopicCollection::kSeedOriginal;
  std::filesystem::path qrels;
  std::optional<std::filesystem::path> mesh_hierarchy;
};

struct ExperimentMatrix {
  std::vector<std::string> prompts;   // p1..p7, guided
  std::vector<std::string> backends;  // backend ids; empty = all
  std::vector<std::string> strategies{"combined"};
  std::vector<std::string> refinement_roles{"manual"};
  SelectionMetric selection_metric = SelectionMetric::kRecall;
};

struct RunConfig {
  std::filesystem::path source;  // config file, for diagnostics
  CollectionSpec collection;
  std::filesystem::path prompts_dir;
  std::vector<BackendSpec> backends;
  std::optional<BackendSpec> extractor;
  PipelineConfig pipeline;
  EntrezConfig entrez;
  std::filesystem::path output_dir = "runs";
  std::string run_id;
  ExperimentMatrix experiments;
  nlohmann::json raw;  // as loaded, for the manifest snapshot

  // Relative paths resolve against the config file's directory. Throws
  // ConfigError.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

  // Every referenced path exists and every HTTP backend's credential
  // variable is set. Throws ConfigError.
  void validate() const;

  const BackendSpec& backend(const std::string& id) const;
  std::filesystem::path run_dir() const { return output_dir / run_id; }
};

std::shared_ptr<GenerationBackend> make_backend(const BackendSpec& spec);

}  // namespace boolgen
