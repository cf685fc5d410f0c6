#include "boolgen/cli.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "boolgen/eval.h"
#include "boolgen/hashing.h"
#include "boolgen/matcher.h"
#include "boolgen/pipeline.h"
#include "boolgen/text.h"
#include "json.hpp"

namespace boolgen {

using nlohmann::json;

namespace {

// Runs fn(0..n-1) on up to `jobs` threads. The exception of the lowest
// failing index is rethrown so failures are reported deterministically.
void run_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Collection {
  CorpusIndex index;
  std::vector<Topic> topics;
  Qrels qrels;
};

std::vector<Topic> load_topics(const RunConfig& config) {
  return ingest_topics(config.collection.topics, config.collection.topic_collection);
}

Collection load_collection(const RunConfig& config) {
  Collection c;
  std::optional<MeshHierarchy> mesh;
  if (config.collection.mesh_hierarchy) mesh = MeshHierarchy::load(*config.collection.mesh_hierarchy);
  c.index = ingest_documents(config.collection.documents, config.collection.documents_format,
                             std::move(mesh));
  c.topics = load_topics(config);
  c.qrels = ingest_qrels(config.collection.qrels);
  if (config.collection.topic_collection == TopicCollection::kSeedDedup) {
    c.qrels = dedup_seed_qrels(c.qrels);
  }
  return c;
}

// Config as loaded, minus the keys that only say where the run lives, so two
// runs of the same experiment produce identical manifests.
json config_snapshot(const RunConfig& config) {
  json snap = config.raw;
  if (snap.is_object()) {
    snap.erase("output_dir");
    snap.erase("run_id");
  }
  return snap;
}

// Executes queries against the configured target as of a topic's search date.
class Retriever {
 public:
  Retriever(const RunConfig& config, const CorpusIndex& index, RetrievalTarget target,
            const CliServices& services)
      : index_(index), target_(target), precedence_(config.pipeline.precedence) {
    if (target_ == RetrievalTarget::kEntrez) {
      client_ = std::make_unique<EntrezClient>(config.entrez, services.transport_factory());
    }
  }

  RetrievalResult run(const std::string& query_text, const Date& date) {
    if (client_) return client_->esearch(query_text, date);
    QueryPtr q;
    try {
      q = parse(query_text, precedence_);
    } catch (const ParseError& e) {
      throw QuerySyntaxRejected(e.what());
    }
    return evaluate(*q, index_, date);
  }

  QueryCounter& counter(const CorpusIndex& index, Precedence precedence) {
    if (!counter_) {
      if (client_) {
        counter_ = std::make_unique<EntrezCounter>(*client_);
      } else {
        counter_ = std::make_unique<LocalCounter>(index, precedence);
      }
    }
    return *counter_;
  }

 private:
  const CorpusIndex& index_;
  RetrievalTarget target_;
  Precedence precedence_;
  std::unique_ptr<EntrezClient> client_;
  std::unique_ptr<QueryCounter> counter_;
};

double score_with(SelectionMetric metric, const TopicEval& e) {
  switch (metric) {
    case SelectionMetric::kRecall: return e.recall;
    case SelectionMetric::kF1: return e.f1;
    case SelectionMetric::kF3: return e.f3;
  }
  return e.recall;
}

std::vector<std::string> pick(const std::vector<std::string>& preferred,
                              const std::vector<std::string>& fallback) {
  return preferred.empty() ? fallback : preferred;
}

std::string results_file_name(const std::string& label, const std::string& backend) {
  return fmt::format("results-{}-{}.jsonl", label, backend);
}

std::vector<json> read_jsonl_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + ": invalid JSON line", 0);
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<std::filesystem::path> run_files(const std::filesystem::path& dir,
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

// ---------------------------------------------------------------------------

int cmd_validate(const std::vector<std::string>& queries, bool show_ast, Precedence precedence,
                 std::ostream& out) {
  bool all_valid = true;
  for (const auto& q : queries) {
    auto report = check_rules(q);
    bool ok = report.valid;
    std::string ast;
    std::string parse_error;
    if (ok && show_ast) {
      try {
        ast = serialize(*parse(q, precedence));
      } catch (const ParseError& e) {
        ok = false;
        parse_error = e.what();
      }
    }
    out << (ok ? "VALID   " : "INVALID ") << q << "\n";
    for (const auto& v : report.violations) {
      out << fmt::format("  {} at offset {}: {}\n", to_string(v.rule), v.position, v.detail);
    }
    if (!parse_error.empty()) out << "  parse error: " << parse_error << "\n";
    if (!ast.empty()) out << "  ast: " << ast << "\n";
    all_valid = all_valid && ok;
  }
  return all_valid ? kExitOk : kExitValidationFailure;
}

int cmd_ingest(const RunConfig& config, std::ostream& out) {
  config.validate();
  Collection c = load_collection(config);
  std::size_t judged = 0, missing_seeds = 0;
  for (const auto& t : c.topics) {
    if (c.qrels.judgments.count(t.topic_id)) ++judged;
    for (const auto& s : t.seed_pmids) missing_seeds += !c.index.find(s).has_value();
  }
  out << fmt::format("documents: {}\n", c.index.size());
  out << fmt::format("topics: {} ({} with judgments)\n", c.topics.size(), judged);
  out << fmt::format("qrels topics: {}\n", c.qrels.judgments.size());
  if (missing_seeds) out << fmt::format("seed pmids not in corpus: {}\n", missing_seeds);
  return kExitOk;
}

int cmd_generate(const RunConfig& config, const GenerateOptions& options,
                 const CliServices& services, std::ostream& out, std::ostream& err) {
  config.validate();
  const auto prompt_names = pick(options.prompts, config.experiments.prompts);
  if (prompt_names.empty()) throw ConfigError("no prompts selected");
  std::vector<std::string> backend_ids = pick(options.backends, config.experiments.backends);
  if (backend_ids.empty()) {
    for (const auto& b : config.backends) backend_ids.push_back(b.id);
  }
  const auto strategy_names = pick(options.strategies, config.experiments.strategies);
  std::vector<PromptId> prompts;
  for (const auto& p : prompt_names) prompts.push_back(parse_prompt_id(p));
  std::vector<SeedStrategy::Mode> strategies;
  for (const auto& s : strategy_names) strategies.push_back(parse_seed_mode(s));
  for (const auto& b : backend_ids) config.backend(b);

  const auto topics = load_topics(config);
  if (options.dry_run) {
    out << fmt::format("run {} ({} topics) -> {}\n", config.run_id, topics.size(),
                       config.run_dir().string());
    for (const auto& b : backend_ids) {
      for (PromptId p : prompts) {
        const PromptKind kind = kind_of(p);
        if (kind == PromptKind::kRefinementZeroShot || kind == PromptKind::kRefinementOneShot) {
          for (const auto& role : config.experiments.refinement_roles) {
            out << fmt::format("  {}-{} x {}\n", to_string(p), role, b);
          }
        } else if (kind == PromptKind::kGuided) {
          out << fmt::format("  guided x {} [strategies: {}]\n", b, fmt::join(strategy_names, ", "));
        } else {
          out << fmt::format("  {} x {}\n", to_string(p), b);
        }
      }
    }
    out << fmt::format("at most {} generation calls per unit and topic\n",
                       config.pipeline.max_attempts);
    return kExitOk;
  }

  Collection c = load_collection(config);
  const PromptRegistry registry = PromptRegistry::load(config.prompts_dir);
  for (PromptId p : prompts) registry.get(p);

  // Build every backend before any call so credential problems surface first.
  std::vector<std::shared_ptr<GenerationBackend>> backends;
  for (const auto& id : backend_ids) backends.push_back(services.backend_factory(config.backend(id)));
  std::shared_ptr<GenerationBackend> extractor;
  if (config.extractor) extractor = services.backend_factory(*config.extractor);

  Retriever retriever(config, c.index, config.pipeline.retrieval_target, services);
  QueryCounter& counter = retriever.counter(c.index, config.pipeline.precedence);

  std::map<std::string, std::size_t> topic_rank;
  for (std::size_t i = 0; i < topics.size(); ++i) topic_rank[topics[i].topic_id] = i;
  auto seed_rank = [&](const GenerationRecord& r) -> std::size_t {
    if (!r.seed_pmid) return 0;
    auto t = topic_rank.find(r.topic_id);
    if (t == topic_rank.end()) return 0;
    const auto& seeds = topics[t->second].seed_pmids;
    return static_cast<std::size_t>(std::find(seeds.begin(), seeds.end(), *r.seed_pmid) -
                                     seeds.begin());
  };
  auto record_order = [&](const GenerationRecord& a, const GenerationRecord& b) {
    auto ka = std::make_tuple(a.label(), a.backend_id, topic_rank[a.topic_id], seed_rank(a));
    auto kb = std::make_tuple(b.label(), b.backend_id, topic_rank[b.topic_id], seed_rank(b));
    return ka < kb;
  };

  const auto run_dir = config.run_dir();
  std::vector<GenerationRecord> records = load_records(run_dir);
  const std::size_t resumed = records.size();
  std::set<std::tuple<std::string, std::string, std::string>> done;
  for (const auto& r : records) done.insert({r.label(), r.backend_id, r.topic_id});

  json meta{{"config", config_snapshot(config)}, {"prompt_assets", registry.asset_hashes()}};
  std::mutex mu;
  std::size_t generated = 0;
  auto commit = [&](std::vector<GenerationRecord> fresh) {
    std::lock_guard lock(mu);
    generated += fresh.size();
    for (auto& r : fresh) records.push_back(std::move(r));
    std::sort(records.begin(), records.end(), record_order);
    persist_run(records, run_dir, meta);
  };

  for (std::size_t bi = 0; bi < backends.size(); ++bi) {
    GenerationBackend& backend = *backends[bi];
    PipelineContext ctx{backend, extractor.get(), registry, counter,
                        config.backend(backend_ids[bi]).generation, config.pipeline};
    for (PromptId p : prompts) {
      const PromptKind kind = kind_of(p);
      struct Unit {
        const Topic* topic;
        std::string role;
      };
      std::vector<Unit> units;
      for (const auto& t : topics) {
        if (kind == PromptKind::kRefinementZeroShot || kind == PromptKind::kRefinementOneShot) {
          for (const auto& role : config.experiments.refinement_roles) {
            std::string label = fmt::format("{}-{}", to_string(p), role);
            if (done.count({label, backend.id(), t.topic_id})) continue;
            if (!t.baseline_queries.count(role)) {
              err << fmt::format("warning: topic {} has no {} baseline; {} skipped\n", t.topic_id,
                                 role, label);
              continue;
            }
            units.push_back({&t, role});
          }
        } else {
          if (done.count({std::string(to_string(p)), backend.id(), t.topic_id})) continue;
          if (kind == PromptKind::kGuided && t.seed_pmids.empty()) {
            err << fmt::format("warning: topic {} has no seed studies; guided skipped\n",
                               t.topic_id);
            continue;
          }
          units.push_back({&t, {}});
        }
      }
      const auto seed_source = corpus_seed_source(c.index);
      run_parallel(units.size(), options.jobs, [&](std::size_t i) {
        const Unit& u = units[i];
        std::vector<GenerationRecord> fresh;
        if (kind == PromptKind::kGuided) {
          auto result = run_guided(*u.topic, ctx, {SeedStrategy::Mode::kPerSeed, {}}, seed_source);
          for (const auto& f : result.failures) {
            std::lock_guard lock(mu);
            err << fmt::format("warning: topic {} seed {}: {}\n", u.topic->topic_id, f.pmid,
                               f.reason);
          }
          fresh = std::move(result.records);
        } else if (!u.role.empty()) {
          fresh.push_back(run_refinement(*u.topic, p, u.role, ctx));
        } else {
          fresh.push_back(run_formulation(*u.topic, p, ctx));
        }
        for (const auto& r : fresh) {
          if (r.aborted) {
            std::lock_guard lock(mu);
            err << fmt::format("warning: {} {} topic {} aborted: {}\n", r.label(), r.backend_id,
                               r.topic_id, *r.aborted);
          }
        }
        commit(std::move(fresh));
      });
    }
  }

  // Guided selections are recomputed from the complete per-seed records.
  std::vector<Selection> selections;
  const SelectionMetric metric = config.experiments.selection_metric;
  for (const auto& backend_id : backend_ids) {
    for (const auto& t : topics) {
      GuidedResult guided;
      for (const auto& r : records) {
        if (r.prompt_id == "guided" && r.backend_id == backend_id && r.topic_id == t.topic_id) {
          guided.records.push_back(r);
        }
      }
      if (guided.records.empty()) continue;
      QueryScorer scorer = [&](const std::string& q) {
        RetrievalResult res;
        try {
          res = retriever.run(q, t.search_date);
        } catch (const QuerySyntaxRejected&) {
          return 0.0;
        }
        return score_with(metric, evaluate_topic(t.topic_id, res.pmids,
                                                 c.qrels.relevant(t.topic_id), res.truncated));
      };
      for (SeedStrategy::Mode mode : strategies) {
        if (mode == SeedStrategy::Mode::kPerSeed) continue;
        select_guided(guided, {mode, metric}, scorer, config.pipeline.precedence);
        if (!guided.final_query) continue;
        selections.push_back({t.topic_id, std::string(to_string(mode)), backend_id,
                              *guided.final_query, guided.selected_seed});
      }
    }
  }
  if (!selections.empty()) persist_selections(selections, run_dir);
  write_manifest(run_dir, meta);

  out << fmt::format("run {}: {} new records, {} resumed, {} guided selections\n", config.run_id,
                     generated, resumed, selections.size());
  return kExitOk;
}

int cmd_execute(const RunConfig& config, const std::filesystem::path& run_dir,
                RetrievalTarget target, bool include_baselines, int jobs,
                const CliServices& services, std::ostream& out, std::ostream& err) {
  config.validate();
  Collection c = load_collection(config);
  std::map<std::string, const Topic*> topic_by_id;
  std::map<std::string, std::size_t> topic_rank;
  for (std::size_t i = 0; i < c.topics.size(); ++i) {
    topic_by_id[c.topics[i].topic_id] = &c.topics[i];
    topic_rank[c.topics[i].topic_id] = i;
  }

  struct Unit {
    std::string label;
    std::string backend;
    std::string topic_id;
    std::string query;
  };
  std::vector<Unit> units;
  for (const auto& r : load_records(run_dir)) {
    if (r.prompt_id == "guided") continue;  // evaluated through selections
    units.push_back({r.label(), r.backend_id, r.topic_id, r.final_query});
  }
  for (const auto& s : load_selections(run_dir)) {
    units.push_back({s.label(), s.backend_id, s.topic_id, s.final_query});
  }
  if (include_baselines) {
    for (const auto& t : c.topics) {
      for (const auto& [role, q] : t.baseline_queries) {
        units.push_back({"baseline-" + role, "baseline", t.topic_id, q});
      }
    }
  }
  if (units.empty()) throw Error("run " + run_dir.string() + " has nothing to execute");
  std::sort(units.begin(), units.end(), [&](const Unit& a, const Unit& b) {
    return std::make_tuple(a.label, a.backend, topic_rank[a.topic_id]) <
           std::make_tuple(b.label, b.backend, topic_rank[b.topic_id]);
  });

  Retriever retriever(config, c.index, target, services);
  std::vector<json> lines(units.size());
  std::mutex mu;
  run_parallel(units.size(), jobs, [&](std::size_t i) {
    const Unit& u = units[i];
    json line{{"label", u.label}, {"backend", u.backend}, {"topic_id", u.topic_id},
              {"query", u.query}, {"error", nullptr}};
    auto topic = topic_by_id.find(u.topic_id);
    RetrievalResult res;
    if (topic == topic_by_id.end()) {
      line["error"] = "topic not in collection";
    } else if (trim(u.query).empty()) {
      line["error"] = "empty query";
    } else {
      try {
        res = retriever.run(u.query, topic->second->search_date);
      } catch (const QuerySyntaxRejected& e) {
        line["error"] = e.what();
      }
    }
    line["count"] = res.count;
    line["truncated"] = res.truncated;
    line["pmids"] = res.pmids;
    if (res.truncated) {
      std::lock_guard lock(mu);
      err << fmt::format("warning: {}/{} topic {}: {} results, {} retrieved\n", u.label, u.backend,
                         u.topic_id, res.count, res.pmids.size());
    }
    lines[i] = std::move(line);
  });

  std::map<std::string, std::string> files;
  for (std::size_t i = 0; i < units.size(); ++i) {
    files[results_file_name(units[i].label, units[i].backend)] += lines[i].dump() + "\n";
  }
  for (const auto& [name, body] : files) write_file_atomic(run_dir / name, body);
  write_manifest(run_dir, nullptr);
  out << fmt::format("executed {} queries into {} result files ({})\n", units.size(), files.size(),
                     to_string(target));
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const std::filesystem::path& run_dir, std::ostream& out,
                 std::ostream& err) {
  config.validate();
  Qrels qrels = ingest_qrels(config.collection.qrels);
  if (config.collection.topic_collection == TopicCollection::kSeedDedup) {
    qrels = dedup_seed_qrels(qrels);
  }
  const auto files = run_files(run_dir, "results-");
  if (files.empty()) throw Error("run " + run_dir.string() + " has no results; run execute first");

  json runs = json::array();
  for (const auto& path : files) {
    std::vector<RunInput> inputs;
    std::string label, backend;
    for (const auto& j : read_jsonl_file(path)) {
      label = j.at("label").get<std::string>();
      backend = j.at("backend").get<std::string>();
      inputs.push_back({j.at("topic_id").get<std::string>(),
                        j.at("pmids").get<std::set<std::string>>(), j.at("truncated").get<bool>()});
    }
    if (inputs.empty()) continue;
    for (const auto& in : inputs) {
      if (!qrels.judgments.count(in.topic_id)) {
        err << fmt::format("warning: topic {} has no judgments\n", in.topic_id);
      }
    }
    RunSummary s = macro_average(evaluate_topics(inputs, qrels.judgments));
    json per_topic = json::array();
    for (const auto& e : s.per_topic) {
      per_topic.push_back({{"topic_id", e.topic_id},
                           {"precision", e.precision},
                           {"recall", e.recall},
                           {"f1", e.f1},
                           {"f3", e.f3},
                           {"retrieved", e.retrieved.size()},
                           {"relevant", e.relevant.size()},
                           {"truncated", e.truncated},
                           {"warning", e.warning ? json(*e.warning) : json(nullptr)}});
    }
    runs.push_back({{"label", label},
                    {"backend", backend},
                    {"n_topics", s.n_topics},
                    {"macro",
                     {{"precision", s.macro.precision},
                      {"recall", s.macro.recall},
                      {"f1", s.macro.f1},
                      {"f3", s.macro.f3}}},
                    {"per_topic", per_topic}});
    out << fmt::format("{:<20} {:<16} P={:.4f} R={:.4f} F1={:.4f} F3={:.4f} ({} topics)\n", label,
                       backend, s.macro.precision, s.macro.recall, s.macro.f1, s.macro.f3,
                       s.n_topics);
  }
  write_file_atomic(run_dir / "evaluation.json", json{{"runs", runs}}.dump(2) + "\n");
  write_manifest(run_dir, nullptr);
  return kExitOk;
}

namespace {

std::vector<Cell> load_cells(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "evaluation.json";
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) {
    throw Error("run " + run_dir.string() + " is not evaluated; run evaluate first");
  }
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("runs")) throw FormatError(path.string() + ": malformed evaluation", 0);
  std::vector<Cell> cells;
  for (const auto& r : j["runs"]) {
    std::vector<TopicEval> per_topic;
    for (const auto& t : r.at("per_topic")) {
      TopicEval e;
      e.topic_id = t.at("topic_id").get<std::string>();
      e.precision = t.at("precision").get<double>();
      e.recall = t.at("recall").get<double>();
      e.f1 = t.at("f1").get<double>();
      e.f3 = t.at("f3").get<double>();
      e.truncated = t.value("truncated", false);
      per_topic.push_back(std::move(e));
    }
    cells.push_back({r.at("label").get<std::string>(), r.at("backend").get<std::string>(),
                     macro_average(std::move(per_topic))});
  }
  return cells;
}

}  // namespace

int cmd_report(const std::vector<std::filesystem::path>& run_dirs,
               const std::optional<std::filesystem::path>& baseline_dir,
               const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run");
  std::vector<Cell> cells;
  std::optional<RunSummary> baseline;
  std::set<std::string> seen;
  auto take_baseline = [&](const Cell& c) {
    if (c.label == "baseline-manual" && !baseline) baseline = c.summary;
  };
  if (baseline_dir) {
    for (const auto& c : load_cells(*baseline_dir)) take_baseline(c);
    if (!baseline) throw Error("baseline run has no baseline-manual results");
  }
  std::vector<GenerationRecord> records;
  for (const auto& dir : run_dirs) {
    for (auto& c : load_cells(dir)) {
      if (starts_with(c.label, "baseline-")) {
        take_baseline(c);
        continue;
      }
      if (!seen.insert(c.id()).second) {
        err << fmt::format("warning: {} appears in more than one run; first kept\n", c.id());
        continue;
      }
      cells.push_back(std::move(c));
    }
    for (auto& r : load_records(dir)) records.push_back(std::move(r));
  }
  if (cells.empty()) throw Error("no evaluated runs to report");

  TableReport table = build_table(cells, baseline);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_file_atomic(out_dir / "table.csv", table.to_csv());
  write_file_atomic(out_dir / "table.txt", table.to_text());
  write_file_atomic(out_dir / "variability.csv", variability_csv(cells));

  std::string sig = "family,metric,baseline,candidate,t,raw_p,adjusted_p,significant\n";
  for (const auto& cmp : table.significance.comparisons) {
    sig += fmt::format("{},{},{},{},{},{},{},{}\n", cmp.family, to_string(cmp.metric),
                       cmp.baseline_id, cmp.candidate_id, cmp.t_statistic, cmp.raw_p,
                       cmp.adjusted_p, cmp.significant ? 1 : 0);
  }
  write_file_atomic(out_dir / "significance.csv", sig);

  std::string retries = "backend,prompt,records,valid,mean_attempts,mean_attempts_valid\n";
  for (const auto& s : compute_retry_stats(records)) {
    retries += fmt::format("{},{},{},{},{:.4f},{:.4f}\n", s.backend_id, s.label, s.records, s.valid,
                           s.mean_attempts, s.mean_attempts_valid);
  }
  write_file_atomic(out_dir / "retries.csv", retries);

  out << table.to_text();
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
            const CliServices& services) {
  CLI::App app{"Boolean query generation, validation, and evaluation for systematic reviews"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;

  auto* validate = app.add_subcommand("validate", "check queries against the syntax rules");
  std::vector<std::string> queries;
  std::string query_file;
  bool show_ast = false;
  std::string precedence_name = "left_to_right";
  validate->add_option("queries", queries, "query text");
  validate->add_option("-f,--file", query_file, "file with one query per line");
  validate->add_flag("--ast", show_ast, "print the parsed query");
  validate->add_option("--precedence", precedence_name, "left_to_right | not_and_or");

  auto* ingest = app.add_subcommand("ingest", "load and summarize the collection");
  ingest->add_option("-c,--config", config_path, "run config")->required();

  auto* generate = app.add_subcommand("generate", "generate queries for the experiment matrix");
  GenerateOptions gen;
  std::string run_id;
  generate->add_option("-c,--config", config_path, "run config")->required();
  generate->add_option("--prompt", gen.prompts, "prompt ids (repeatable)");
  generate->add_option("--backend", gen.backends, "backend ids (repeatable)");
  generate->add_option("--strategy", gen.strategies, "guided strategies (repeatable)");
  generate->add_option("--run-id", run_id, "override the config run id");
  generate->add_option("-j,--jobs", jobs, "parallel topics");
  generate->add_flag("--dry-run", gen.dry_run, "print the planned matrix");

  auto* execute = app.add_subcommand("execute", "run final queries and store retrieved pmids");
  std::string run_dir_opt, target_name;
  bool include_baselines = false;
  execute->add_option("-c,--config", config_path, "run config")->required();
  execute->add_option("--run", run_dir_opt, "run directory (default from config)");
  execute->add_option("--target", target_name, "local | entrez");
  execute->add_flag("--include-baselines", include_baselines, "also run the topics' baseline queries");
  execute->add_option("-j,--jobs", jobs, "parallel queries");

  auto* evaluate = app.add_subcommand("evaluate", "score executed runs against the judgments");
  evaluate->add_option("-c,--config", config_path, "run config")->required();
  evaluate->add_option("--run", run_dir_opt, "run directory (default from config)");

  auto* report = app.add_subcommand("report", "build tables, significance, and retry statistics");
  std::vector<std::string> report_runs;
  std::string baseline_run, out_dir = "report";
  report->add_option("--run", report_runs, "evaluated run directories")->required();
  report->add_option("--baseline", baseline_run, "run holding the manual baseline results");
  report->add_option("-o,--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    auto load = [&] {
      auto cfg = RunConfig::load(config_path);
      if (!run_id.empty()) cfg.run_id = run_id;
      return cfg;
    };
    auto run_dir_for = [&](const RunConfig& cfg) {
      return run_dir_opt.empty() ? cfg.run_dir() : std::filesystem::path(run_dir_opt);
    };
    if (*validate) {
      Precedence prec = precedence_name == "not_and_or" ? Precedence::kNotAndOr
                                                        : Precedence::kLeftToRight;
      if (precedence_name != "not_and_or" && precedence_name != "left_to_right") {
        throw ConfigError("unknown precedence " + precedence_name);
      }
      if (!query_file.empty()) {
        std::istringstream in(read_file(query_file));
        std::string line;
        while (std::getline(in, line)) {
          if (!trim(line).empty() && !starts_with(trim(line), "#")) queries.push_back(trim(line));
        }
      }
      if (queries.empty()) throw ConfigError("validate needs a query or --file");
      return cmd_validate(queries, show_ast, prec, out);
    }
    if (*ingest) return cmd_ingest(load(), out);
    if (*generate) {
      gen.jobs = jobs;
      return cmd_generate(load(), gen, services, out, err);
    }
    if (*execute) {
      auto cfg = load();
      RetrievalTarget target = target_name.empty() ? cfg.pipeline.retrieval_target
                                                   : parse_retrieval_target(target_name);
      return cmd_execute(cfg, run_dir_for(cfg), target, include_baselines, jobs, services, out, err);
    }
    if (*evaluate) {
      auto cfg = load();
      return cmd_evaluate(cfg, run_dir_for(cfg), out, err);
    }
    if (*report) {
      std::vector<std::filesystem::path> dirs(report_runs.begin(), report_runs.end());
      std::optional<std::filesystem::path> base;
      if (!baseline_run.empty()) base = baseline_run;
      return cmd_report(dirs, base, out_dir, out, err);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitConfigError;
}

}  // namespace boolgen
