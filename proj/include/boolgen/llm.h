#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "boolgen/corpus.h"
#include "boolgen/error.h"

namespace boolgen {

enum class OutputMode { kPlainText, kJson, kSystemJson };

std::string_view to_string(OutputMode mode);
OutputMode parse_output_mode(std::string_view name);

struct GenerationConfig {
  std::string backend_id;
  double temperature = 1.0;
  std::int64_t random_seed = 42;
  OutputMode output_mode = OutputMode::kPlainText;
  int max_output_tokens = 4096;

  void validate() const;  // throws ConfigError
};

enum class PromptId { kP1, kP2, kP3, kP4, kP5, kP6, kP7, kGuided };
enum class PromptKind {
  kFormulationZeroShot,
  kFormulationOneShot,
  kRefinementZeroShot,
  kRefinementOneShot,
  kGuided,
};

std::string_view to_string(PromptId id);
PromptId parse_prompt_id(std::string_view name);
PromptKind kind_of(PromptId id);

class MissingPlaceholder : public Error {
 public:
  explicit MissingPlaceholder(std::string name)
      : Error("missing placeholder {" + name + "}"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// A prompt body with `{placeholder}` slots. A line consisting of
// `<<<INPUT>>>` splits the instruction preamble from the topic material; a
// body without the marker is all topic material.
class PromptTemplate {
 public:
  // Throws ConfigError when the body lacks a placeholder its kind requires.
  PromptTemplate(PromptId id, std::string body);

  PromptId id() const { return id_; }
  PromptKind kind() const { return kind_; }
  const std::string& body() const { return body_; }
  const std::string& instruction() const { return instruction_; }
  const std::string& input() const { return input_; }

 private:
  PromptId id_;
  PromptKind kind_;
  std::string body_;
  std::string instruction_;
  std::string input_;
};

inline constexpr std::string_view kInputMarker = "<<<INPUT>>>";

struct OneShotExample {
  std::string topic_id;
  std::string title;
  std::string query;
};

// Loads `<dir>/<prompt>.txt` for each prompt id plus `<dir>/example.json`
// holding the one-shot example.
class PromptRegistry {
 public:
  static PromptRegistry load(const std::filesystem::path& dir);
  void add(PromptTemplate tmpl, std::string asset_hash = {});
  void set_example(OneShotExample example) { example_ = std::move(example); }

  const PromptTemplate& get(PromptId id) const;
  bool has(PromptId id) const { return templates_.contains(id); }
  const std::optional<OneShotExample>& example() const { return example_; }
  // asset file name -> sha256
  const std::map<std::string, std::string>& asset_hashes() const { return hashes_; }

 private:
  std::map<PromptId, PromptTemplate> templates_;
  std::optional<OneShotExample> example_;
  std::map<std::string, std::string> hashes_;
};

struct ChatRequest {
  std::optional<std::string> system_message;
  std::string user_message;
  GenerationConfig config;
};

extern const std::string_view kJsonAnswerInstruction;
extern const std::string_view kDefaultSystemPreamble;

using Bindings = std::map<std::string, std::string>;

// {topic_title} is bound from `topic` unless `bindings` overrides it.
// Throws MissingPlaceholder.
ChatRequest render_prompt(const PromptTemplate& tmpl, const Topic& topic, const Bindings& bindings,
                          const GenerationConfig& config);

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  std::optional<TokenUsage> usage;
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient) : Error(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

// Chat-completion backend. Implementations must be callable concurrently.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string id() const = 0;
  virtual Completion complete(const ChatRequest& request) = 0;
  // False when the backend ignores temperature/seed.
  virtual bool honors_sampling_params() const { return true; }
};

// Returns the completion text verbatim.
std::string generate(const ChatRequest& request, GenerationBackend& backend,
                     std::optional<TokenUsage>* usage = nullptr);

// Scripted responses for tests and offline runs. Each step is either a
// completion or an error. Keyed scripts apply when the user message contains
// the key; otherwise the default script is used. Every script keeps its own
// cursor; once exhausted it repeats its last step (or cycles, if asked).
class ScriptedBackend : public GenerationBackend {
 public:
  struct Step {
    std::string text;
    std::optional<bool> error_transient;  // set => throw BackendError

    static Step reply(std::string text) { return {std::move(text), std::nullopt}; }
    static Step fail(bool transient) { return {"scripted failure", transient}; }
  };

  ScriptedBackend(std::string id, std::vector<Step> script, bool cycle = false);
  void add_keyed(std::string key, std::vector<Step> script);

  std::string id() const override { return id_; }
  Completion complete(const ChatRequest& request) override;
  std::uint64_t calls() const { return calls_.load(); }
  const std::vector<ChatRequest> requests() const;

 private:
  struct Script {
    std::vector<Step> steps;
    std::size_t cursor = 0;
  };
  std::string id_;
  bool cycle_;
  Script default_;
  std::vector<std::pair<std::string, Script>> keyed_;
  mutable std::mutex mu_;
  std::vector<ChatRequest> requests_;
  std::atomic<std::uint64_t> calls_{0};
};

// Stable cache key for a request: sha256 over its canonical JSON form.
std::string request_key(const ChatRequest& request);

// Append-only on-disk completion cache in front of an optional inner
// backend. With no inner backend a miss is a permanent BackendError.
class ReplayBackend : public GenerationBackend {
 public:
  ReplayBackend(std::string id, std::filesystem::path dir,
                std::shared_ptr<GenerationBackend> inner = nullptr);

  std::string id() const override { return id_; }
  Completion complete(const ChatRequest& request) override;
  bool honors_sampling_params() const override;
  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }

 private:
  std::string id_;
  std::filesystem::path dir_;
  std::shared_ptr<GenerationBackend> inner_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

struct HttpBackendConfig {
  std::string id;
  std::string endpoint;  // base URL; `/chat/completions` is appended
  std::string model;
  std::string api_key_env;  // empty: no Authorization header
  bool sampling_params = true;
  std::chrono::milliseconds timeout{120000};
};

// OpenAI-compatible chat-completions client.
class HttpChatBackend : public GenerationBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config);
  std::string id() const override { return config_.id; }
  Completion complete(const ChatRequest& request) override;
  bool honors_sampling_params() const override { return config_.sampling_params; }

  // Wire body for a request; exposed for tests.
  std::string request_body(const ChatRequest& request) const;
  static Completion parse_response(const std::string& body);

 private:
  HttpBackendConfig config_;
};

class NoQueryFound : public Error {
 public:
  NoQueryFound() : Error("no Boolean query found in model output") {}
};

extern const std::string_view kExtractionInstruction;

// How a candidate was obtained.
enum class ExtractionPath { kStructural, kExtractorBackend, kHeuristic };

struct Extraction {
  std::string query;
  ExtractionPath path;
};

// JSON modes first try to read the "query" field of a JSON object in `raw`.
// Otherwise the extractor backend (temperature 0, fixed instruction) is asked
// to isolate the query; without an extractor the heuristic below applies.
// Throws NoQueryFound when nothing usable remains.
Extraction extract_query(const std::string& raw, GenerationBackend* extractor, OutputMode mode);

// Structural path only; nullopt when `raw` holds no JSON object with a string
// "query" member.
std::optional<std::string> extract_json_query(const std::string& raw);

// Longest parenthesized span containing an uppercase operator (widened to its
// whole line when the line continues the query with an operator), else the
// longest line containing an operator, else the longest line holding a
// field-tagged term. nullopt when none exists.
std::optional<std::string> heuristic_extract(const std::string& raw);

}  // namespace boolgen
