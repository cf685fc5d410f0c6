#include "boolgen/pipeline.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "boolgen/hashing.h"
#include "boolgen/matcher.h"
#include "boolgen/text.h"

namespace boolgen {

using nlohmann::json;

std::string_view to_string(RetrievalTarget target) {
  return target == RetrievalTarget::kEntrez ? "entrez" : "local";
}

RetrievalTarget parse_retrieval_target(std::string_view name) {
  if (name == "local" || name == "local_index") return RetrievalTarget::kLocalIndex;
  if (name == "entrez") return RetrievalTarget::kEntrez;
  throw ConfigError(fmt::format("unknown retrieval target '{}'", name));
}

void PipelineConfig::validate() const {
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (transient_retries < 0) throw ConfigError("transient_retries must be >= 0");
  validity.validate();
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kValid: return "valid";
    case Verdict::kRuleInvalid: return "rule_invalid";
    case Verdict::kRetrievalInvalid: return "retrieval_invalid";
    case Verdict::kExtractionFailed: return "extraction_failed";
  }
  return "extraction_failed";
}

Verdict parse_verdict(std::string_view name) {
  for (Verdict v : {Verdict::kValid, Verdict::kRuleInvalid, Verdict::kRetrievalInvalid,
                    Verdict::kExtractionFailed}) {
    if (to_string(v) == name) return v;
  }
  throw FormatError(fmt::format("unknown verdict '{}'", name), 0);
}

std::string GenerationRecord::label() const {
  return base_role ? prompt_id + "-" + *base_role : prompt_id;
}

// ---------------------------------------------------------------------------
// Record serialization

namespace {

Rule parse_rule(std::string_view name) {
  for (Rule r : {Rule::kUnbalancedBrackets, Rule::kInvalidOperator, Rule::kConsecutiveOperators,
                 Rule::kDanglingOperator}) {
    if (to_string(r) == name) return r;
  }
  throw FormatError(fmt::format("unknown rule '{}'", name), 0);
}

json optional_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}

}  // namespace

json to_json(const GenerationRecord& record) {
  json attempts = json::array();
  for (const auto& a : record.attempts) {
    json violations = json::array();
    for (const auto& v : a.rule_report.violations) {
      violations.push_back({{"rule", to_string(v.rule)}, {"position", v.position}, {"detail", v.detail}});
    }
    attempts.push_back({{"raw_output", a.raw_output},
                        {"extracted_query", a.extracted_query},
                        {"rule_report", {{"valid", a.rule_report.valid}, {"violations", violations}}},
                        {"retrieval_count", a.retrieval_count ? json(*a.retrieval_count) : json(nullptr)},
                        {"verdict", to_string(a.verdict)},
                        {"note", a.note}});
  }
  return {{"topic_id", record.topic_id},
          {"prompt_id", record.prompt_id},
          {"backend_id", record.backend_id},
          {"base_role", optional_json(record.base_role)},
          {"seed_pmid", optional_json(record.seed_pmid)},
          {"attempts", attempts},
          {"final_query", record.final_query},
          {"final_valid", record.final_valid},
          {"attempts_used", record.attempts_used},
          {"sampling_params_honored", record.sampling_params_honored},
          {"aborted", optional_json(record.aborted)}};
}

GenerationRecord record_from_json(const json& j) {
  try {
    GenerationRecord r;
    r.topic_id = j.at("topic_id").get<std::string>();
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.base_role = optional_string(j, "base_role");
    r.seed_pmid = optional_string(j, "seed_pmid");
    for (const auto& ja : j.at("attempts")) {
      Attempt a;
      a.raw_output = ja.at("raw_output").get<std::string>();
      a.extracted_query = ja.at("extracted_query").get<std::string>();
      const auto& rr = ja.at("rule_report");
      a.rule_report.valid = rr.at("valid").get<bool>();
      for (const auto& jv : rr.at("violations")) {
        a.rule_report.violations.push_back({parse_rule(jv.at("rule").get<std::string>()),
                                            jv.at("position").get<std::size_t>(),
                                            jv.at("detail").get<std::string>()});
      }
      if (!ja.at("retrieval_count").is_null()) {
        a.retrieval_count = ja.at("retrieval_count").get<std::uint64_t>();
      }
      a.verdict = parse_verdict(ja.at("verdict").get<std::string>());
      a.note = ja.value("note", "");
      r.attempts.push_back(std::move(a));
    }
    r.final_query = j.at("final_query").get<std::string>();
    r.final_valid = j.at("final_valid").get<bool>();
    r.attempts_used = j.at("attempts_used").get<int>();
    r.sampling_params_honored = j.value("sampling_params_honored", true);
    r.aborted = optional_string(j, "aborted");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed generation record: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Counters

std::uint64_t LocalCounter::count(const std::string& query_text, const std::optional<Date>& cutoff) {
  QueryPtr q;
  try {
    q = parse(query_text, precedence_);
  } catch (const ParseError& e) {
    throw QuerySyntaxRejected(e.what());
  }
  return evaluate_ids(*q, index_, cutoff).size();
}

std::uint64_t EntrezCounter::count(const std::string& query_text, const std::optional<Date>& cutoff) {
  return client_.esearch(query_text, cutoff).count;
}

// ---------------------------------------------------------------------------
// Retry loop

namespace {

// Transient failures get `retries` extra calls; the last error is rethrown.
std::string call_with_retries(const ChatRequest& request, GenerationBackend& backend, int retries) {
  for (int extra = 0;; ++extra) {
    try {
      return generate(request, backend);
    } catch (const BackendError& e) {
      if (!e.transient() || extra >= retries) throw;
    }
  }
}

// Counts calls so extractor errors keep their transient retries.
class RetryingExtractor : public GenerationBackend {
 public:
  RetryingExtractor(GenerationBackend& inner, int retries) : inner_(inner), retries_(retries) {}
  std::string id() const override { return inner_.id(); }
  Completion complete(const ChatRequest& request) override {
    return {call_with_retries(request, inner_, retries_), std::nullopt};
  }

 private:
  GenerationBackend& inner_;
  int retries_;
};

}  // namespace

GenerationRecord run_attempts(const Topic& topic, std::string prompt_id, const ChatRequest& request,
                              const PipelineContext& ctx) {
  GenerationRecord rec;
  rec.topic_id = topic.topic_id;
  rec.prompt_id = std::move(prompt_id);
  rec.backend_id = ctx.backend.id();
  rec.sampling_params_honored = ctx.backend.honors_sampling_params();

  std::optional<RetryingExtractor> extractor;
  if (ctx.extractor) extractor.emplace(*ctx.extractor, ctx.config.transient_retries);
  const std::optional<Date> cutoff =
      ctx.config.use_search_date_cutoff ? std::optional<Date>(topic.search_date) : std::nullopt;

  for (int k = 0; k < ctx.config.max_attempts; ++k) {
    Attempt a;
    try {
      a.raw_output = call_with_retries(request, ctx.backend, ctx.config.transient_retries);
      Extraction ex = extract_query(a.raw_output, extractor ? &*extractor : nullptr,
                                    request.config.output_mode);
      a.extracted_query = ex.query;
      a.rule_report = check_rules(a.extracted_query);
      if (!a.rule_report.valid) {
        a.verdict = Verdict::kRuleInvalid;
      } else {
        try {
          a.retrieval_count = ctx.counter.count(a.extracted_query, cutoff);
          a.verdict = validate_count(*a.retrieval_count, ctx.config.validity)
                          ? Verdict::kValid
                          : Verdict::kRetrievalInvalid;
        } catch (const QuerySyntaxRejected& e) {
          a.verdict = Verdict::kRetrievalInvalid;
          a.note = e.what();
        }
      }
    } catch (const NoQueryFound& e) {
      a.verdict = Verdict::kExtractionFailed;
      a.note = e.what();
    } catch (const BackendError& e) {
      a.verdict = Verdict::kExtractionFailed;
      a.note = e.what();
      if (!e.transient()) rec.aborted = e.what();
    } catch (const NetworkError& e) {
      a.verdict = Verdict::kRetrievalInvalid;
      a.note = e.what();
      rec.aborted = e.what();
    } catch (const ApiError& e) {
      a.verdict = Verdict::kRetrievalInvalid;
      a.note = e.what();
      rec.aborted = e.what();
    }
    const bool valid = a.verdict == Verdict::kValid;
    rec.attempts.push_back(std::move(a));
    if (valid || rec.aborted) break;
  }

  rec.attempts_used = static_cast<int>(rec.attempts.size());
  const Attempt& last = rec.attempts.back();
  rec.final_valid = last.verdict == Verdict::kValid;
  if (rec.final_valid || ctx.config.keep_last_on_exhaustion) rec.final_query = last.extracted_query;
  return rec;
}

namespace {

void bind_example(const PipelineContext& ctx, Bindings& b) {
  const auto& ex = ctx.prompts.example();
  if (!ex) throw ConfigError("one-shot prompt requires a loaded example");
  b["example_topic_id"] = ex->topic_id;
  b["example_title"] = ex->title;
  b["example_query"] = ex->query;
}

GenerationConfig generation_for(const PipelineContext& ctx) {
  GenerationConfig g = ctx.generation;
  if (g.backend_id.empty()) g.backend_id = ctx.backend.id();
  return g;
}

}  // namespace

GenerationRecord run_formulation(const Topic& topic, PromptId prompt, const PipelineContext& ctx) {
  const PromptKind kind = kind_of(prompt);
  if (kind != PromptKind::kFormulationZeroShot && kind != PromptKind::kFormulationOneShot) {
    throw ConfigError(fmt::format("{} is not a formulation prompt", to_string(prompt)));
  }
  Bindings b;
  if (kind == PromptKind::kFormulationOneShot) bind_example(ctx, b);
  auto req = render_prompt(ctx.prompts.get(prompt), topic, b, generation_for(ctx));
  return run_attempts(topic, std::string(to_string(prompt)), req, ctx);
}

GenerationRecord run_refinement(const Topic& topic, PromptId prompt, const std::string& base_role,
                                const PipelineContext& ctx) {
  const PromptKind kind = kind_of(prompt);
  if (kind != PromptKind::kRefinementZeroShot && kind != PromptKind::kRefinementOneShot) {
    throw ConfigError(fmt::format("{} is not a refinement prompt", to_string(prompt)));
  }
  auto base = topic.baseline_queries.find(base_role);
  if (base == topic.baseline_queries.end()) throw MissingBaseline(base_role);
  Bindings b{{"query_to_refine", base->second}};
  if (kind == PromptKind::kRefinementOneShot) bind_example(ctx, b);
  auto req = render_prompt(ctx.prompts.get(prompt), topic, b, generation_for(ctx));
  auto rec = run_attempts(topic, std::string(to_string(prompt)), req, ctx);
  rec.base_role = base_role;
  return rec;
}

// ---------------------------------------------------------------------------
// Guided

std::string_view to_string(SeedStrategy::Mode mode) {
  switch (mode) {
    case SeedStrategy::Mode::kPerSeed: return "per_seed";
    case SeedStrategy::Mode::kBest: return "best";
    case SeedStrategy::Mode::kCombined: return "combined";
  }
  return "combined";
}

SeedStrategy::Mode parse_seed_mode(std::string_view name) {
  if (name == "per_seed" || name == "per-seed") return SeedStrategy::Mode::kPerSeed;
  if (name == "best") return SeedStrategy::Mode::kBest;
  if (name == "combined") return SeedStrategy::Mode::kCombined;
  throw ConfigError(fmt::format("unknown seed strategy '{}'", name));
}

std::string_view to_string(SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::kRecall: return "recall";
    case SelectionMetric::kF1: return "f1";
    case SelectionMetric::kF3: return "f3";
  }
  return "recall";
}

SelectionMetric parse_selection_metric(std::string_view name) {
  if (name == "recall") return SelectionMetric::kRecall;
  if (name == "f1") return SelectionMetric::kF1;
  if (name == "f3") return SelectionMetric::kF3;
  throw ConfigError(fmt::format("unknown selection metric '{}'", name));
}

SeedTextSource corpus_seed_source(const CorpusIndex& index) {
  return [index](const std::string& pmid) -> std::optional<std::string> {
    auto id = index.find(pmid);
    if (!id) return std::nullopt;
    const Document& d = index.doc(*id);
    return fmt::format("Title: {}\nAbstract: {}", d.title, d.abstract);
  };
}

std::size_t select_best_seed(const std::vector<std::string>& seed_pmids,
                             const std::vector<double>& scores) {
  if (seed_pmids.empty() || seed_pmids.size() != scores.size()) {
    throw Error("select_best_seed needs one score per seed");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best] || (scores[i] == scores[best] && seed_pmids[i] < seed_pmids[best])) {
      best = i;
    }
  }
  return best;
}

GuidedResult run_guided(const Topic& topic, const PipelineContext& ctx, const SeedStrategy& strategy,
                        const SeedTextSource& seed_text, const QueryScorer& scorer) {
  if (topic.seed_pmids.empty()) throw NoSeeds();
  if (strategy.mode == SeedStrategy::Mode::kBest && !scorer) {
    throw ConfigError("the best seed strategy needs a scorer");
  }
  const auto& tmpl = ctx.prompts.get(PromptId::kGuided);
  GuidedResult out;
  for (const auto& pmid : topic.seed_pmids) {
    auto text = seed_text(pmid);
    if (!text) {
      out.failures.push_back({pmid, "seed document not found"});
      continue;
    }
    auto req = render_prompt(tmpl, topic, {{"seed_studies", *text}}, generation_for(ctx));
    auto rec = run_attempts(topic, "guided", req, ctx);
    rec.seed_pmid = pmid;
    out.records.push_back(std::move(rec));
  }
  select_guided(out, strategy, scorer, ctx.config.precedence);
  return out;
}

void select_guided(GuidedResult& result, const SeedStrategy& strategy, const QueryScorer& scorer,
                   Precedence precedence) {
  result.final_query.reset();
  result.selected_seed.reset();
  result.seed_scores.clear();
  if (result.records.empty()) return;
  if (strategy.mode == SeedStrategy::Mode::kBest) {
    if (!scorer) throw ConfigError("the best seed strategy needs a scorer");
    std::vector<std::string> pmids;
    for (const auto& r : result.records) {
      pmids.push_back(r.seed_pmid.value_or(""));
      result.seed_scores.push_back(r.final_query.empty() ? 0.0 : scorer(r.final_query));
    }
    std::size_t best = select_best_seed(pmids, result.seed_scores);
    result.final_query = result.records[best].final_query;
    result.selected_seed = pmids[best];
  } else if (strategy.mode == SeedStrategy::Mode::kCombined) {
    std::vector<QueryPtr> parts;
    for (const auto& r : result.records) {
      try {
        parts.push_back(parse(r.final_query, precedence));
      } catch (const ParseError& e) {
        result.failures.push_back(
            {r.seed_pmid.value_or(""), std::string("left out of combination: ") + e.what()});
      }
    }
    if (!parts.empty()) result.final_query = serialize(*combine_or(parts));
  }
}

json to_json(const Selection& s) {
  return {{"topic_id", s.topic_id},
          {"strategy", s.strategy},
          {"backend_id", s.backend_id},
          {"final_query", s.final_query},
          {"selected_seed", optional_json(s.selected_seed)}};
}

Selection selection_from_json(const json& j) {
  try {
    return {j.at("topic_id").get<std::string>(), j.at("strategy").get<std::string>(),
            j.at("backend_id").get<std::string>(), j.at("final_query").get<std::string>(),
            optional_string(j, "selected_seed")};
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed selection: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Run directories

std::string records_file_name(const std::string& label, const std::string& backend_id) {
  return fmt::format("records-{}-{}.jsonl", label, backend_id);
}

std::string selections_file_name(const std::string& strategy, const std::string& backend_id) {
  return fmt::format("selections-{}-{}.jsonl", strategy, backend_id);
}

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw FormatError(path.string() + ": invalid JSON", static_cast<std::size_t>(n));
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<std::filesystem::path> files_with_prefix(const std::filesystem::path& dir,
                                                     std::string_view prefix) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto name = entry.path().filename().string();
    if (entry.is_regular_file() && starts_with(name, prefix) && name.ends_with(".jsonl")) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

json persist_run(const std::vector<GenerationRecord>& records, const std::filesystem::path& run_dir,
                 const json& meta) {
  ensure_dir(run_dir);
  std::map<std::string, std::string> files;
  for (const auto& r : records) {
    files[records_file_name(r.label(), r.backend_id)] += to_json(r).dump() + "\n";
  }
  for (const auto& [name, body] : files) write_file_atomic(run_dir / name, body);
  return write_manifest(run_dir, meta);
}

void persist_selections(const std::vector<Selection>& selections,
                        const std::filesystem::path& run_dir) {
  ensure_dir(run_dir);
  std::map<std::string, std::string> files;
  for (const auto& s : selections) {
    files[selections_file_name(s.strategy, s.backend_id)] += to_json(s).dump() + "\n";
  }
  for (const auto& [name, body] : files) write_file_atomic(run_dir / name, body);
}

std::vector<GenerationRecord> load_records(const std::filesystem::path& run_dir) {
  std::vector<GenerationRecord> out;
  for (const auto& path : files_with_prefix(run_dir, "records-")) {
    for (const auto& j : read_jsonl(path)) out.push_back(record_from_json(j));
  }
  return out;
}

std::vector<Selection> load_selections(const std::filesystem::path& run_dir) {
  std::vector<Selection> out;
  for (const auto& path : files_with_prefix(run_dir, "selections-")) {
    for (const auto& j : read_jsonl(path)) out.push_back(selection_from_json(j));
  }
  return out;
}

json write_manifest(const std::filesystem::path& run_dir, const json& meta) {
  ensure_dir(run_dir);
  const auto manifest_path = run_dir / "manifest.json";
  json kept_meta = meta;
  std::error_code ec;
  if (meta.is_null() && std::filesystem::exists(manifest_path, ec)) {
    auto old = json::parse(read_file(manifest_path), nullptr, false);
    if (!old.is_discarded() && old.contains("meta")) kept_meta = old["meta"];
  }
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name != "manifest.json" && !starts_with(name, ".tmp")) {
      names.push_back(name);
    }
  }
  std::sort(names.begin(), names.end());
  json files = json::object();
  for (const auto& name : names) files[name] = sha256_file(run_dir / name);
  json manifest{{"files", files}, {"meta", kept_meta}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return manifest;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir) {
  std::vector<std::string> problems;
  const auto manifest_path = run_dir / "manifest.json";
  std::error_code ec;
  if (!std::filesystem::exists(manifest_path, ec)) return {"manifest.json missing"};
  auto manifest = json::parse(read_file(manifest_path), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("files") || !manifest["files"].is_object()) {
    return {"manifest.json malformed"};
  }
  for (const auto& [name, hash] : manifest["files"].items()) {
    const auto path = run_dir / name;
    if (!std::filesystem::exists(path, ec)) {
      problems.push_back(name + ": missing");
    } else if (sha256_file(path) != hash.get<std::string>()) {
      problems.push_back(name + ": hash mismatch");
    }
  }
  return problems;
}

std::vector<RetryStats> compute_retry_stats(const std::vector<GenerationRecord>& records) {
  struct Acc {
    std::size_t n = 0, valid = 0;
    long long attempts = 0, attempts_valid = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto& r : records) {
    auto& g = groups[{r.backend_id, r.label()}];
    ++g.n;
    g.attempts += r.attempts_used;
    if (r.final_valid) {
      ++g.valid;
      g.attempts_valid += r.attempts_used;
    }
  }
  std::vector<RetryStats> out;
  for (const auto& [key, g] : groups) {
    RetryStats s;
    s.backend_id = key.first;
    s.label = key.second;
    s.records = g.n;
    s.valid = g.valid;
    s.mean_attempts = static_cast<double>(g.attempts) / static_cast<double>(g.n);
    s.mean_attempts_valid =
        g.valid ? static_cast<double>(g.attempts_valid) / static_cast<double>(g.valid) : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace boolgen
