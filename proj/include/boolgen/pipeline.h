#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "boolgen/corpus.h"
#include "boolgen/entrez.h"
#include "boolgen/llm.h"
#include "boolgen/query.h"
#include "json.hpp"

namespace boolgen {

enum class RetrievalTarget { kLocalIndex, kEntrez };

std::string_view to_string(RetrievalTarget target);
RetrievalTarget parse_retrieval_target(std::string_view name);

struct PipelineConfig {
  int max_attempts = 20;
  ValidityPolicy validity;
  RetrievalTarget retrieval_target = RetrievalTarget::kLocalIndex;
  bool keep_last_on_exhaustion = true;
  // Validate retrieval counts as of the topic's search date.
  bool use_search_date_cutoff = true;
  // Extra calls allowed for a transient backend error within one attempt.
  int transient_retries = 3;
  Precedence precedence = Precedence::kLeftToRight;

  void validate() const;  // throws ConfigError
};

enum class Verdict { kValid, kRuleInvalid, kRetrievalInvalid, kExtractionFailed };

std::string_view to_string(Verdict verdict);
Verdict parse_verdict(std::string_view name);

struct Attempt {
  std::string raw_output;
  std::string extracted_query;
  ValidityReport rule_report;
  std::optional<std::uint64_t> retrieval_count;
  Verdict verdict = Verdict::kExtractionFailed;
  std::string note;  // error text for failed generation/extraction/retrieval
};

struct GenerationRecord {
  std::string topic_id;
  std::string prompt_id;  // p1..p7, guided
  std::string backend_id;
  std::optional<std::string> base_role;  // refinement only
  std::optional<std::string> seed_pmid;  // guided only
  std::vector<Attempt> attempts;
  std::string final_query;
  bool final_valid = false;
  int attempts_used = 0;
  bool sampling_params_honored = true;
  std::optional<std::string> aborted;  // permanent backend error

  // Experiment label: prompt id, plus the refined role ("p6-manual").
  std::string label() const;
};

nlohmann::json to_json(const GenerationRecord& record);
GenerationRecord record_from_json(const nlohmann::json& j);

// Retrieval stage of validation. Throws QuerySyntaxRejected when the target
// cannot run the query at all.
class QueryCounter {
 public:
  virtual ~QueryCounter() = default;
  virtual std::uint64_t count(const std::string& query_text, const std::optional<Date>& cutoff) = 0;
};

class LocalCounter : public QueryCounter {
 public:
  LocalCounter(const CorpusIndex& index, Precedence precedence)
      : index_(index), precedence_(precedence) {}
  std::uint64_t count(const std::string& query_text, const std::optional<Date>& cutoff) override;

 private:
  const CorpusIndex& index_;
  Precedence precedence_;
};

class EntrezCounter : public QueryCounter {
 public:
  explicit EntrezCounter(EntrezClient& client) : client_(client) {}
  std::uint64_t count(const std::string& query_text, const std::optional<Date>& cutoff) override;

 private:
  EntrezClient& client_;
};

struct PipelineContext {
  GenerationBackend& backend;
  GenerationBackend* extractor = nullptr;  // null: heuristic extraction
  const PromptRegistry& prompts;
  QueryCounter& counter;
  GenerationConfig generation;
  PipelineConfig config;
};

class MissingBaseline : public Error {
 public:
  explicit MissingBaseline(const std::string& role)
      : Error("topic has no baseline query for role '" + role + "'"), role_(role) {}
  const std::string& role() const { return role_; }

 private:
  std::string role_;
};

class NoSeeds : public Error {
 public:
  NoSeeds() : Error("topic has no seed studies") {}
};

// Generate -> extract -> check rules -> validate retrieval count, repeating
// the identical request until an attempt is valid or max_attempts is spent.
GenerationRecord run_attempts(const Topic& topic, std::string prompt_id, const ChatRequest& request,
                              const PipelineContext& ctx);

// p1..p5; one-shot prompts bind the registry's example.
GenerationRecord run_formulation(const Topic& topic, PromptId prompt, const PipelineContext& ctx);

// p6/p7 refining the topic's baseline query of the given role.
GenerationRecord run_refinement(const Topic& topic, PromptId prompt, const std::string& base_role,
                                const PipelineContext& ctx);

enum class SelectionMetric { kRecall, kF1, kF3 };

struct SeedStrategy {
  enum class Mode { kPerSeed, kBest, kCombined };
  Mode mode = Mode::kCombined;
  SelectionMetric selection_metric = SelectionMetric::kRecall;
};

std::string_view to_string(SeedStrategy::Mode mode);
SeedStrategy::Mode parse_seed_mode(std::string_view name);
std::string_view to_string(SelectionMetric metric);
SelectionMetric parse_selection_metric(std::string_view name);

// Seed pmid -> text injected into {seed_studies}; nullopt if unknown.
using SeedTextSource = std::function<std::optional<std::string>(const std::string& pmid)>;
// Scores one per-seed query under the strategy's selection metric.
using QueryScorer = std::function<double(const std::string& query_text)>;

SeedTextSource corpus_seed_source(const CorpusIndex& index);

struct SeedFailure {
  std::string pmid;
  std::string reason;
};

struct GuidedResult {
  std::vector<GenerationRecord> records;  // one per resolvable seed
  std::vector<SeedFailure> failures;
  std::optional<std::string> final_query;    // best / combined
  std::optional<std::string> selected_seed;  // best
  std::vector<double> seed_scores;           // best, aligned with records
};

// Throws NoSeeds. `scorer` is required for the best strategy.
GuidedResult run_guided(const Topic& topic, const PipelineContext& ctx, const SeedStrategy& strategy,
                        const SeedTextSource& seed_text, const QueryScorer& scorer = {});

// Fills final_query/selected_seed/seed_scores of `result` from its per-seed
// records. Records whose query does not parse are left out of the
// combination and listed as failures.
void select_guided(GuidedResult& result, const SeedStrategy& strategy, const QueryScorer& scorer,
                   Precedence precedence);

// Index of the best score; ties go to the lexicographically smallest pmid.
std::size_t select_best_seed(const std::vector<std::string>& seed_pmids,
                             const std::vector<double>& scores);

// Guided selection outcome persisted next to the per-seed records.
struct Selection {
  std::string topic_id;
  std::string strategy;  // best | combined
  std::string backend_id;
  std::string final_query;
  std::optional<std::string> selected_seed;

  std::string label() const { return "guided-" + strategy; }
};

nlohmann::json to_json(const Selection& selection);
Selection selection_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Run directories: runs/<run-id>/{manifest.json, records-<prompt>-<backend>.jsonl, ...}

std::string records_file_name(const std::string& label, const std::string& backend_id);
std::string selections_file_name(const std::string& strategy, const std::string& backend_id);

// Writes one JSONL file per (label, backend), records in the given order,
// then refreshes the manifest. Returns the manifest.
nlohmann::json persist_run(const std::vector<GenerationRecord>& records,
                           const std::filesystem::path& run_dir, const nlohmann::json& meta);
void persist_selections(const std::vector<Selection>& selections,
                        const std::filesystem::path& run_dir);

std::vector<GenerationRecord> load_records(const std::filesystem::path& run_dir);
std::vector<Selection> load_selections(const std::filesystem::path& run_dir);

// Hashes every data file in the run directory into manifest.json. `meta`
// (config snapshot, prompt asset hashes) is stored alongside; when null the
// existing meta is kept.
nlohmann::json write_manifest(const std::filesystem::path& run_dir, const nlohmann::json& meta);
// Problems found (missing files, hash mismatches); empty means intact.
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir);

struct RetryStats {
  std::string backend_id;
  std::string label;
  std::size_t records = 0;
  std::size_t valid = 0;
  double mean_attempts = 0.0;        // over all records, exhausted ones included
  double mean_attempts_valid = 0.0;  // over records that reached a valid query
};

std::vector<RetryStats> compute_retry_stats(const std::vector<GenerationRecord>& records);

}  // namespace boolgen
