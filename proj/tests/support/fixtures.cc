#include "support/fixtures.h"

#include <atomic>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "boolgen/cli.h"
#include "boolgen/eval.h"
#include "boolgen/hashing.h"
#include "boolgen/matcher.h"
#include "boolgen/text.h"
#include "json.hpp"

namespace boolgen::testing {

namespace {

const std::vector<std::string> kWords = {
    "rabies", "vaccine", "immune", "response", "dose",   "booster", "pre-exposure",
    "trial",  "adult",   "child",  "titer",    "serum",  "café",    "prophylaxis"};

const std::vector<std::string> kHeadings = {
    "Rabies Vaccines", "Rabies/prevention & control", "Vaccines", "Viral Vaccines",
    "Humans",          "Animals",                     "Vaccination/methods",
    "Rabies Vaccines/administration & dosage",        "Antibodies, Viral/blood"};

const std::vector<std::string> kPubTypes = {"Review", "Randomized Controlled Trial",
                                            "Case Reports", "Meta-Analysis"};

const std::vector<std::string> kSubheadings = {"prevention & control", "methods",
                                               "administration & dosage", "blood"};

const std::vector<std::string> kTags = {"",   "tiab", "Title/Abstract", "ti", "ab",
                                        "mh", "Mesh", "MeSH:noexp",     "sh", "pt",
                                        "All Fields", "sb"};

}  // namespace

TempDir::TempDir(const std::string& prefix) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          fmt::format("{}-{}-{}", prefix, rd(), counter++);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::filesystem::path source_dir() { return BOOLGEN_SOURCE_DIR; }

std::string RandomCorpus::pick(const std::vector<std::string>& from) {
  return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng_)];
}

Date RandomCorpus::date() {
  std::uniform_int_distribution<int> year(2000, 2020), month(1, 12), day(1, 28);
  return Date(year(rng_), static_cast<unsigned>(month(rng_)), static_cast<unsigned>(day(rng_)));
}

std::vector<Document> RandomCorpus::documents(std::size_t n) {
  std::vector<Document> docs;
  auto words = [&](int lo, int hi) {
    std::string s;
    int k = std::uniform_int_distribution<int>(lo, hi)(rng_);
    for (int i = 0; i < k; ++i) {
      if (i) s += ' ';
      std::string w = pick(kWords);
      if (std::bernoulli_distribution(0.2)(rng_)) w[0] = static_cast<char>(std::toupper(w[0]));
      s += w;
    }
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.pmid = std::to_string(100000 + i * 7);
    d.title = words(2, 6);
    if (std::bernoulli_distribution(0.85)(rng_)) d.abstract = words(4, 12);
    int mesh = std::uniform_int_distribution<int>(0, 3)(rng_);
    for (int m = 0; m < mesh; ++m) d.mesh_headings.push_back(pick(kHeadings));
    if (std::bernoulli_distribution(0.7)(rng_)) d.publication_types.push_back(pick(kPubTypes));
    d.entry_date = date();
    docs.push_back(std::move(d));
  }
  return docs;
}

MeshHierarchy RandomCorpus::hierarchy() const {
  MeshHierarchy h;
  h.add("Rabies Vaccines", "Viral Vaccines");
  h.add("Viral Vaccines", "Vaccines");
  h.add("Vaccination", "Immunization");
  h.add("Antibodies, Viral", "Antibodies");
  return h;
}

QueryPtr RandomCorpus::term() {
  const std::string tag = pick(kTags);
  FieldTag field = tag.empty() ? FieldTag::untagged() : FieldTag::from_raw(tag);
  std::string text;
  bool phrase = false, wildcard = false;
  switch (field.canonical) {
    case CanonicalField::kMesh:
    case CanonicalField::kMeshNoExp: {
      std::string h = pick(kHeadings);
      text = h.substr(0, h.find('/'));
      if (std::bernoulli_distribution(0.2)(rng_)) {
        text = text.substr(0, std::min<std::size_t>(text.size(), 4));
        wildcard = true;
      }
      phrase = text.find(' ') != std::string::npos || text.find(',') != std::string::npos;
      break;
    }
    case CanonicalField::kSubheading:
      text = pick(kSubheadings);
      phrase = text.find(' ') != std::string::npos;
      break;
    case CanonicalField::kPubType:
      text = pick(kPubTypes);
      phrase = text.find(' ') != std::string::npos;
      break;
    default: {
      int kind = std::uniform_int_distribution<int>(0, 3)(rng_);
      if (kind == 0) {
        text = pick(kWords) + " " + pick(kWords);
        phrase = true;
      } else if (kind == 1) {
        std::string w = pick(kWords);
        text = w.substr(0, std::uniform_int_distribution<std::size_t>(2, 4)(rng_));
        wildcard = true;
      } else {
        text = pick(kWords);
      }
    }
  }
  return make_term(text, field, phrase, wildcard);
}

QueryPtr RandomCorpus::query(int max_depth) {
  if (max_depth <= 1 || std::bernoulli_distribution(0.3)(rng_)) return term();
  static const Operator kOps[] = {Operator::kAnd, Operator::kOr, Operator::kNot};
  Operator op = kOps[std::uniform_int_distribution<int>(0, 2)(rng_)];
  return make_op(op, query(max_depth - 1), query(max_depth - 1));
}


std::vector<std::string> golden_queries() {
  std::ifstream in(source_dir() / "tests" / "fixtures" / "golden_queries.txt");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<Mutation> rule_mutations(const std::string& query) {
  std::vector<Mutation> out;
  for (const Token& tok : tokenize(query)) {
    if (tok.kind == TokenKind::kRParen) {
      std::string m = query;
      m.erase(tok.offset, 1);
      out.push_back({m, Rule::kUnbalancedBrackets, fmt::format("delete ')' at {}", tok.offset)});
    } else if (tok.kind == TokenKind::kOperator) {
      std::string m = query;
      m.insert(tok.offset + tok.text.size(), " " + tok.text);
      out.push_back(
          {m, Rule::kConsecutiveOperators, fmt::format("double '{}' at {}", tok.text, tok.offset)});
    }
  }
  out.push_back({"AND " + query, Rule::kDanglingOperator, "prefix 'AND'"});
  return out;
}


PromptRegistry simple_prompts() {
  PromptRegistry reg;
  reg.add(PromptTemplate(PromptId::kP1, "Write a query for {topic_title}."));
  reg.add(PromptTemplate(PromptId::kP2, "Be precise.\n<<<INPUT>>>\nTopic: {topic_title}"));
  reg.add(PromptTemplate(PromptId::kP3, "Be thorough.\n<<<INPUT>>>\nTopic: {topic_title}"));
  reg.add(PromptTemplate(PromptId::kP4,
                         "Example {example_title}: {example_query}\n<<<INPUT>>>\n{topic_title}"));
  reg.add(PromptTemplate(PromptId::kP5, "Like {example_query}\n<<<INPUT>>>\n{topic_title}"));
  reg.add(PromptTemplate(PromptId::kP6, "Refine {query_to_refine} for {topic_title}"));
  reg.add(PromptTemplate(PromptId::kP7,
                         "Refine {query_to_refine} like {example_query} for {topic_title}"));
  reg.add(PromptTemplate(PromptId::kGuided,
                         "Use these studies.\n<<<INPUT>>>\n{topic_title}\n{seed_studies}"));
  reg.set_example({"CD000000", "Example topic", "(example[tiab] OR sample[tiab])"});
  return reg;
}

namespace {

Document make_doc(std::string pmid, std::string title, Date date) {
  Document d;
  d.pmid = std::move(pmid);
  d.title = std::move(title);
  d.entry_date = date;
  return d;
}

}  // namespace

RetryWorld::RetryWorld() {
  index = CorpusIndex::build({
      make_doc("1", "Rabies vaccine trial", Date(2010, 1, 1)),
      make_doc("2", "Rabies vaccine in children", Date(2012, 1, 1)),
      make_doc("3", "Dog bites", Date(2012, 1, 1)),
      make_doc("4", "Rabies vaccine booster", Date(2020, 1, 1)),
  });
  topic.topic_id = "R1";
  topic.title = "Rabies vaccines";
  topic.search_date = Date(2016, 1, 1);
  topic.baseline_queries["manual"] = "rabies[tiab]";
}

std::string malformed_query(int i) { return fmt::format("(rabies{}[tiab] OR vaccine[tiab]", i); }

std::shared_ptr<ScriptedBackend> failing_then_valid(int failures) {
  std::vector<ScriptedBackend::Step> steps;
  for (int i = 1; i <= failures; ++i) {
    steps.push_back(ScriptedBackend::Step::reply("Here you go:\n" + malformed_query(i)));
  }
  steps.push_back(ScriptedBackend::Step::reply(std::string("Query:\n") + kValidQuery));
  return std::make_shared<ScriptedBackend>("scripted", std::move(steps));
}

GuidedWorld::GuidedWorld() {
  std::vector<Document> docs;
  const Date d(2012, 1, 1);
  for (int i = 101; i <= 103; ++i) docs.push_back(make_doc(std::to_string(i), "alpha result", d));
  for (int i = 104; i <= 106; ++i) docs.push_back(make_doc(std::to_string(i), "beta result", d));
  for (int i = 107; i <= 108; ++i) docs.push_back(make_doc(std::to_string(i), "gamma result", d));
  docs.push_back(make_doc("109", "delta result", d));
  docs.push_back(make_doc("201", "alpha noise", d));
  docs.push_back(make_doc("202", "beta noise", d));
  docs.push_back(make_doc("501", "Seed study one", d));
  docs.push_back(make_doc("502", "Seed study two", d));
  docs.push_back(make_doc("503", "Seed study three", d));
  index = CorpusIndex::build(docs);
  relevant = {"101", "102", "103", "104", "105", "106", "107", "108", "109", "501", "502", "503"};

  topic.topic_id = "G1";
  topic.title = "Guided topic";
  topic.search_date = Date(2016, 1, 1);
  topic.seed_pmids = {"501", "502", "503"};

  seed_queries = {{"501", "alpha[tiab]"},
                  {"502", "beta[tiab] OR gamma[tiab]"},
                  {"503", "gamma[tiab]"}};
  backend = std::make_shared<ScriptedBackend>(
      "guided-model", std::vector<ScriptedBackend::Step>{ScriptedBackend::Step::reply("no idea")});
  backend->add_keyed("Seed study one", {ScriptedBackend::Step::reply(seed_queries["501"])});
  backend->add_keyed("Seed study two", {ScriptedBackend::Step::reply(seed_queries["502"])});
  backend->add_keyed("Seed study three", {ScriptedBackend::Step::reply(seed_queries["503"])});
}

std::set<std::string> GuidedWorld::retrieve(const std::string& query) const {
  return evaluate(*parse(query), index, topic.search_date).pmids;
}

double GuidedWorld::recall_of(const std::string& query) const {
  return evaluate_topic(topic.topic_id, retrieve(query), relevant).recall;
}


std::filesystem::path write_demo_config(const std::filesystem::path& dir, const std::string& run_id) {
  const auto demo = source_dir() / "data" / "demo";
  auto j = nlohmann::json::parse(read_file(demo / "config.json"));
  for (const char* key : {"documents", "topics", "qrels"}) {
    j["collection"][key] = (demo / j["collection"][key].get<std::string>()).lexically_normal().string();
  }
  j["prompts_dir"] = (demo / j["prompts_dir"].get<std::string>()).lexically_normal().string();
  j["output_dir"] = (dir / "runs").string();
  j["run_id"] = run_id;
  const auto path = dir / "config.json";
  write_text(path, j.dump(2));
  return path;
}

CliResult run_cli_captured(const std::vector<std::string>& args, const CliServices& services) {
  std::vector<const char*> argv{"boolgen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = boolgen::run_cli(static_cast<int>(argv.size()), argv.data(), out, err, services);
  return {code, out.str(), err.str()};
}

CliResult run_cli_captured(const std::vector<std::string>& args) {
  return run_cli_captured(args, CliServices{});
}

std::map<std::string, std::string> snapshot_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) return out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[std::filesystem::relative(entry.path(), root).string()] = read_file(entry.path());
  }
  return out;
}

}  // namespace boolgen::testing
