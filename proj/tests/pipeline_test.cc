#include <gtest/gtest.h>

#include "boolgen/hashing.h"
#include "boolgen/pipeline.h"
#include "json.hpp"
#include "support/fixtures.h"

namespace boolgen {
namespace {

using Step = ScriptedBackend::Step;

class RetryTest : public ::testing::Test {
 protected:
  GenerationRecord run(GenerationBackend& backend, PipelineConfig config = {},
                       GenerationBackend* extractor = nullptr, PromptId prompt = PromptId::kP1) {
    LocalCounter counter(world_.index, config.precedence);
    PipelineContext ctx{backend, extractor, world_.prompts, counter, {}, config};
    return run_formulation(world_.topic, prompt, ctx);
  }

  testing::RetryWorld world_;
};

TEST_F(RetryTest, FirstValidAttemptStopsTheLoop) {
  auto backend = testing::failing_then_valid(0);
  auto rec = run(*backend);
  EXPECT_TRUE(rec.final_valid);
  EXPECT_EQ(rec.attempts_used, 1);
  EXPECT_EQ(rec.final_query, testing::kValidQuery);
  EXPECT_EQ(rec.attempts[0].verdict, Verdict::kValid);
  EXPECT_EQ(*rec.attempts[0].retrieval_count, 2u);  // doc 4 is after the search date
  EXPECT_EQ(backend->calls(), 1u);
}

TEST_F(RetryTest, FailuresAreRecordedPerAttempt) {
  auto backend = testing::failing_then_valid(4);
  auto rec = run(*backend);
  EXPECT_TRUE(rec.final_valid);
  EXPECT_EQ(rec.attempts_used, 5);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(rec.attempts[i].verdict, Verdict::kRuleInvalid);
    EXPECT_TRUE(rec.attempts[i].rule_report.has(Rule::kUnbalancedBrackets));
    EXPECT_EQ(rec.attempts[i].extracted_query, testing::malformed_query(i + 1));
  }
}

TEST_F(RetryTest, IdenticalRequestEveryAttempt) {
  auto backend = testing::failing_then_valid(3);
  run(*backend);
  auto reqs = backend->requests();
  ASSERT_EQ(reqs.size(), 4u);
  for (const auto& r : reqs) EXPECT_EQ(request_key(r), request_key(reqs[0]));
}

TEST_F(RetryTest, ExhaustionKeepsLastExtraction) {
  auto backend = testing::failing_then_valid(24);
  auto rec = run(*backend);
  EXPECT_FALSE(rec.final_valid);
  EXPECT_EQ(rec.attempts_used, 20);
  EXPECT_EQ(rec.final_query, testing::malformed_query(20));
  PipelineConfig drop;
  drop.keep_last_on_exhaustion = false;
  auto again = run(*testing::failing_then_valid(24), drop);
  EXPECT_TRUE(again.final_query.empty());
}

TEST_F(RetryTest, RetrievalBoundsAreEnforced) {
  ScriptedBackend zero("z", {Step::reply("nothingmatches[tiab]"), Step::reply("rabies[tiab]")});
  auto rec = run(zero);
  EXPECT_EQ(rec.attempts[0].verdict, Verdict::kRetrievalInvalid);
  EXPECT_EQ(*rec.attempts[0].retrieval_count, 0u);
  EXPECT_EQ(rec.attempts_used, 2);

  PipelineConfig tight;
  tight.validity.max_count = 1;
  tight.max_attempts = 3;
  ScriptedBackend broad("b", {Step::reply("rabies[tiab]")});
  auto capped = run(broad, tight);
  EXPECT_FALSE(capped.final_valid);
  EXPECT_EQ(capped.attempts_used, 3);
}

TEST_F(RetryTest, SearchDateCutoffCanBeDisabled) {
  PipelineConfig config;
  config.use_search_date_cutoff = false;
  auto rec = run(*testing::failing_then_valid(0), config);
  EXPECT_EQ(*rec.attempts[0].retrieval_count, 3u);
}

TEST_F(RetryTest, GrammarErrorsCountAsRetrievalInvalid) {
  ScriptedBackend b("b", {Step::reply("rabies[tiab] AND"), Step::reply("rabies[tiab]")});
  auto rec = run(b);
  EXPECT_EQ(rec.attempts[0].verdict, Verdict::kRetrievalInvalid);
  EXPECT_FALSE(rec.attempts[0].note.empty());
  EXPECT_TRUE(rec.final_valid);
}

TEST_F(RetryTest, ExtractionFailuresUseAnAttempt) {
  ScriptedBackend b("b", {Step::reply("I cannot write that."), Step::reply("rabies[tiab]")});
  auto rec = run(b);
  EXPECT_EQ(rec.attempts[0].verdict, Verdict::kExtractionFailed);
  EXPECT_EQ(rec.attempts_used, 2);
}

TEST_F(RetryTest, TransientErrorsRetryWithinAnAttempt) {
  ScriptedBackend b("b", {Step::fail(true), Step::fail(true), Step::reply("rabies[tiab]")});
  auto rec = run(b);
  EXPECT_EQ(rec.attempts_used, 1);
  EXPECT_TRUE(rec.final_valid);
  EXPECT_EQ(b.calls(), 3u);
}

TEST_F(RetryTest, PermanentErrorsAbort) {
  ScriptedBackend b("b", {Step::fail(false)});
  auto rec = run(b);
  EXPECT_TRUE(rec.aborted.has_value());
  EXPECT_EQ(rec.attempts_used, 1);
  EXPECT_FALSE(rec.final_valid);
}

TEST_F(RetryTest, ExtractorBackendIsUsed) {
  ScriptedBackend gen("g", {Step::reply("lots of chatter")});
  ScriptedBackend extractor("x", {Step::reply("rabies[tiab]")});
  auto rec = run(gen, {}, &extractor);
  EXPECT_TRUE(rec.final_valid);
  EXPECT_EQ(rec.final_query, "rabies[tiab]");
}

TEST_F(RetryTest, JsonModeReadsStructuredAnswer) {
  ScriptedBackend b("b", {Step::reply(R"({"query": "rabies[tiab]"})")});
  LocalCounter counter(world_.index, Precedence::kLeftToRight);
  GenerationConfig g;
  g.output_mode = OutputMode::kJson;
  PipelineContext ctx{b, nullptr, world_.prompts, counter, g, {}};
  auto rec = run_formulation(world_.topic, PromptId::kP2, ctx);
  EXPECT_TRUE(rec.final_valid);
  EXPECT_NE(b.requests()[0].user_message.find(kJsonAnswerInstruction), std::string::npos);
}

TEST_F(RetryTest, OneShotPromptBindsExample) {
  ScriptedBackend b("b", {Step::reply("rabies[tiab]")});
  run(b, {}, nullptr, PromptId::kP4);
  EXPECT_NE(b.requests()[0].user_message.find("(example[tiab] OR sample[tiab])"),
            std::string::npos);
}

TEST_F(RetryTest, RefinementNeedsBaseline) {
  ScriptedBackend b("b", {Step::reply("rabies[tiab]")});
  LocalCounter counter(world_.index, Precedence::kLeftToRight);
  PipelineContext ctx{b, nullptr, world_.prompts, counter, {}, {}};
  auto rec = run_refinement(world_.topic, PromptId::kP6, "manual", ctx);
  EXPECT_EQ(rec.label(), "p6-manual");
  EXPECT_NE(b.requests()[0].user_message.find("Refine rabies[tiab]"), std::string::npos);
  EXPECT_THROW(run_refinement(world_.topic, PromptId::kP6, "objective", ctx), MissingBaseline);
  EXPECT_THROW(run_refinement(world_.topic, PromptId::kP1, "manual", ctx), ConfigError);
  EXPECT_THROW(run_formulation(world_.topic, PromptId::kP6, ctx), ConfigError);
}

TEST(PipelineConfigTest, Validation) {
  PipelineConfig c;
  c.max_attempts = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_retrieval_target("entrez"), RetrievalTarget::kEntrez);
  EXPECT_EQ(parse_verdict(to_string(Verdict::kRuleInvalid)), Verdict::kRuleInvalid);
}

class GuidedTest : public ::testing::Test {
 protected:
  GuidedResult run(SeedStrategy::Mode mode, const QueryScorer& scorer = {}) {
    LocalCounter counter(world_.index, Precedence::kLeftToRight);
    PipelineContext ctx{*world_.backend, nullptr, world_.prompts, counter, {}, {}};
    SeedStrategy strategy;
    strategy.mode = mode;
    return run_guided(world_.topic, ctx, strategy, corpus_seed_source(world_.index), scorer);
  }
  QueryScorer recall_scorer() {
    return [this](const std::string& q) { return world_.recall_of(q); };
  }

  testing::GuidedWorld world_;
};

TEST_F(GuidedTest, PerSeedRecordsCarrySeeds) {
  auto r = run(SeedStrategy::Mode::kPerSeed);
  ASSERT_EQ(r.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(*r.records[i].seed_pmid, world_.topic.seed_pmids[i]);
    EXPECT_EQ(r.records[i].final_query, world_.seed_queries[world_.topic.seed_pmids[i]]);
  }
  EXPECT_FALSE(r.final_query.has_value());
}

TEST_F(GuidedTest, CombinedIsUnionOfPerSeedResults) {
  auto r = run(SeedStrategy::Mode::kCombined);
  ASSERT_TRUE(r.final_query.has_value());
  std::set<std::string> uni;
  for (const auto& rec : r.records) {
    auto part = world_.retrieve(rec.final_query);
    uni.insert(part.begin(), part.end());
    EXPECT_GE(world_.recall_of(*r.final_query), world_.recall_of(rec.final_query));
  }
  EXPECT_EQ(world_.retrieve(*r.final_query), uni);
}

TEST_F(GuidedTest, BestPicksHighestScore) {
  auto r = run(SeedStrategy::Mode::kBest, recall_scorer());
  EXPECT_EQ(*r.selected_seed, "502");
  EXPECT_EQ(*r.final_query, world_.seed_queries["502"]);
  ASSERT_EQ(r.seed_scores.size(), 3u);
  EXPECT_DOUBLE_EQ(r.seed_scores[1], 5.0 / 12.0);
}

TEST_F(GuidedTest, BestBreaksTiesByPmid) {
  world_.topic.seed_pmids = {"503", "502", "501"};
  auto r = run(SeedStrategy::Mode::kBest, [](const std::string&) { return 0.5; });
  EXPECT_EQ(*r.selected_seed, "501");
  EXPECT_EQ(select_best_seed({"9", "10", "2"}, {1.0, 1.0, 0.5}), 1u);
  EXPECT_THROW(select_best_seed({"1"}, {}), Error);
}

TEST_F(GuidedTest, MissingSeedsAreReported) {
  world_.topic.seed_pmids.push_back("999");
  auto r = run(SeedStrategy::Mode::kCombined);
  EXPECT_EQ(r.records.size(), 3u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].pmid, "999");
  world_.topic.seed_pmids.clear();
  EXPECT_THROW(run(SeedStrategy::Mode::kCombined), NoSeeds);
  world_.topic.seed_pmids = {"501"};
  EXPECT_THROW(run(SeedStrategy::Mode::kBest), ConfigError);
}

TEST_F(GuidedTest, UnparseableQueriesLeftOutOfCombination) {
  auto r = run(SeedStrategy::Mode::kPerSeed);
  r.records[1].final_query = "(broken";
  SeedStrategy combined;
  combined.mode = SeedStrategy::Mode::kCombined;
  select_guided(r, combined, {}, Precedence::kLeftToRight);
  EXPECT_EQ(*r.final_query, "(alpha[tiab] OR gamma[tiab])");
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].pmid, "502");
}

GenerationRecord sample_record(const std::string& topic, const std::string& prompt,
                               const std::string& backend, int attempts, bool valid) {
  GenerationRecord r;
  r.topic_id = topic;
  r.prompt_id = prompt;
  r.backend_id = backend;
  for (int i = 0; i < attempts; ++i) {
    Attempt a;
    a.raw_output = "out " + std::to_string(i);
    a.extracted_query = "q" + std::to_string(i);
    a.verdict = valid && i + 1 == attempts ? Verdict::kValid : Verdict::kRuleInvalid;
    if (a.verdict == Verdict::kRuleInvalid) {
      a.rule_report.valid = false;
      a.rule_report.violations.push_back({Rule::kDanglingOperator, 3, "detail"});
    } else {
      a.retrieval_count = 17;
    }
    r.attempts.push_back(a);
  }
  r.attempts_used = attempts;
  r.final_valid = valid;
  r.final_query = r.attempts.back().extracted_query;
  return r;
}

TEST(PersistenceTest, RecordsRoundTripThroughJson) {
  auto r = sample_record("T1", "p6", "m", 3, true);
  r.base_role = "manual";
  r.aborted = "x";
  auto back = record_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  EXPECT_EQ(back.label(), "p6-manual");
  EXPECT_EQ(back.attempts[0].rule_report.violations[0].rule, Rule::kDanglingOperator);
  EXPECT_THROW(record_from_json(nlohmann::json::object()), FormatError);
}

TEST(PersistenceTest, RunDirectoryWithManifest) {
  testing::TempDir dir;
  std::vector<GenerationRecord> recs{sample_record("T1", "p1", "a", 1, true),
                                     sample_record("T2", "p1", "a", 2, true),
                                     sample_record("T1", "p2", "b", 1, false)};
  auto manifest = persist_run(recs, dir.path(), {{"note", "x"}});
  EXPECT_TRUE(std::filesystem::exists(dir / "records-p1-a.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir / "records-p2-b.jsonl"));
  EXPECT_EQ(manifest["files"].size(), 2u);
  EXPECT_EQ(manifest["meta"]["note"], "x");
  EXPECT_TRUE(verify_manifest(dir.path()).empty());

  auto loaded = load_records(dir.path());
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_EQ(loaded[1].topic_id, "T2");

  persist_selections({{"T1", "combined", "a", "(x OR y)", std::nullopt}}, dir.path());
  auto kept = write_manifest(dir.path(), nullptr);
  EXPECT_EQ(kept["meta"]["note"], "x");
  EXPECT_EQ(load_selections(dir.path())[0].final_query, "(x OR y)");

  testing::write_text(dir / "records-p1-a.jsonl", "tampered\n");
  std::filesystem::remove(dir / "records-p2-b.jsonl");
  auto problems = verify_manifest(dir.path());
  EXPECT_EQ(problems, (std::vector<std::string>{"records-p1-a.jsonl: hash mismatch",
                                                "records-p2-b.jsonl: missing"}));
}

TEST(PersistenceTest, PersistIsByteStable) {
  testing::TempDir a, b;
  std::vector<GenerationRecord> recs{sample_record("T1", "p1", "a", 2, true)};
  persist_run(recs, a.path(), {{"k", 1}});
  persist_run(recs, b.path(), {{"k", 1}});
  EXPECT_EQ(read_file(a / "manifest.json"), read_file(b / "manifest.json"));
}

TEST(RetryStatsTest, MeansPerBackendAndPrompt) {
  std::vector<GenerationRecord> recs{sample_record("T1", "p1", "a", 1, true),
                                     sample_record("T2", "p1", "a", 3, true),
                                     sample_record("T3", "p1", "a", 20, false),
                                     sample_record("T1", "p2", "a", 4, true)};
  auto stats = compute_retry_stats(recs);
  ASSERT_EQ(stats.size(), 2u);
  EXPECT_EQ(stats[0].label, "p1");
  EXPECT_EQ(stats[0].records, 3u);
  EXPECT_EQ(stats[0].valid, 2u);
  EXPECT_DOUBLE_EQ(stats[0].mean_attempts, 8.0);
  EXPECT_DOUBLE_EQ(stats[0].mean_attempts_valid, 2.0);
  EXPECT_DOUBLE_EQ(stats[1].mean_attempts, 4.0);
}

}  // namespace
}  // namespace boolgen
