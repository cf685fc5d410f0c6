#include "boolgen/corpus.h"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include <fmt/format.h>

#include "boolgen/error.h"
#include "boolgen/text.h"
#include "json.hpp"

namespace boolgen {

using nlohmann::json;

const std::set<std::string>& Qrels::relevant(const std::string& topic_id) const {
  static const std::set<std::string> kEmpty;
  auto it = judgments.find(topic_id);
  return it == judgments.end() ? kEmpty : it->second;
}

DocumentFormat parse_document_format(std::string_view name) {
  if (name == "jsonl") return DocumentFormat::kJsonl;
  if (name == "medline-text" || name == "medline") return DocumentFormat::kMedlineText;
  throw ConfigError(fmt::format("unknown document format '{}'", name));
}

TopicCollection parse_topic_collection(std::string_view name) {
  if (name == "clef-tar") return TopicCollection::kClefTar;
  if (name == "seed-original") return TopicCollection::kSeedOriginal;
  if (name == "seed-dedup") return TopicCollection::kSeedDedup;
  throw ConfigError(fmt::format("unknown collection tag '{}'", name));
}

// ---------------------------------------------------------------------------
// MeshHierarchy

void MeshHierarchy::add(std::string_view child, std::string_view parent) {
  auto c = normalize_heading(child);
  auto p = normalize_heading(parent);
  if (c.empty() || p.empty() || c == p) return;
  parents_[c].insert(p);
  children_[p].insert(c);
}

MeshHierarchy MeshHierarchy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open MeSH hierarchy " + path.string());
  MeshHierarchy h;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(fmt::format("{}:{}: expected child<TAB>parent", path.string(), line_no),
                        line_no);
    }
    h.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return h;
}

namespace {

std::set<std::string> closure(const std::map<std::string, std::set<std::string>>& edges,
                              std::string start) {
  std::set<std::string> seen{start};
  std::vector<std::string> stack{std::move(start)};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    auto it = edges.find(node);
    if (it == edges.end()) continue;
    for (const auto& next : it->second) {
      if (seen.insert(next).second) stack.push_back(next);
    }
  }
  return seen;
}

}  // namespace

std::set<std::string> MeshHierarchy::ancestors_or_self(std::string_view heading) const {
  return closure(parents_, normalize_heading(heading));
}

std::set<std::string> MeshHierarchy::descendants_or_self(std::string_view heading) const {
  return closure(children_, normalize_heading(heading));
}

// ---------------------------------------------------------------------------
// CorpusIndex

struct CorpusIndex::Storage {
  std::vector<Document> docs;
  std::map<std::string, DocId, std::less<>> by_pmid;
  std::array<Postings, 4> tokens;
  // [field][doc][value] -> token sequence
  std::array<std::vector<std::vector<std::vector<std::string>>>, 4> sequences;
  Postings descriptors;
  Postings subheadings;
  Postings pub_types;
  std::optional<MeshHierarchy> hierarchy;
};

namespace {

std::size_t slot(IndexField f) { return static_cast<std::size_t>(f); }

void add_posting(CorpusIndex::Postings& postings, const std::string& key, DocId id) {
  auto& list = postings[key];
  if (list.empty() || list.back() != id) list.push_back(id);
}

}  // namespace

CorpusIndex::CorpusIndex() : storage_(std::make_shared<Storage>()) {}

CorpusIndex CorpusIndex::build(std::vector<Document> docs, std::optional<MeshHierarchy> hierarchy) {
  std::sort(docs.begin(), docs.end(),
            [](const Document& a, const Document& b) { return a.pmid < b.pmid; });
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].pmid == docs[i - 1].pmid) throw DuplicatePmid(docs[i].pmid);
  }

  auto s = std::make_shared<Storage>();
  s->hierarchy = std::move(hierarchy);
  s->docs = std::move(docs);
  for (auto& seqs : s->sequences) seqs.resize(s->docs.size());

  for (DocId id = 0; id < s->docs.size(); ++id) {
    const Document& d = s->docs[id];
    s->by_pmid.emplace(d.pmid, id);

    auto index_value = [&](IndexField field, std::string_view value) {
      auto toks = normalize_tokens(value);
      for (const auto& t : toks) add_posting(s->tokens[slot(field)], t, id);
      s->sequences[slot(field)][id].push_back(std::move(toks));
    };
    index_value(IndexField::kTitle, d.title);
    index_value(IndexField::kAbstract, d.abstract);
    for (const auto& h : d.mesh_headings) {
      index_value(IndexField::kMesh, h);
      auto slash = h.find('/');
      auto descriptor = normalize_heading(h.substr(0, slash));
      if (!descriptor.empty()) add_posting(s->descriptors, descriptor, id);
      if (slash != std::string::npos) {
        auto sub = normalize_heading(h.substr(slash + 1));
        if (!sub.empty()) add_posting(s->subheadings, sub, id);
      }
    }
    for (const auto& p : d.publication_types) {
      index_value(IndexField::kPubType, p);
      auto norm = normalize_heading(p);
      if (!norm.empty()) add_posting(s->pub_types, norm, id);
    }
  }

  CorpusIndex index;
  index.storage_ = std::move(s);
  return index;
}

std::size_t CorpusIndex::size() const { return storage_->docs.size(); }
const Document& CorpusIndex::doc(DocId id) const { return storage_->docs.at(id); }
const std::vector<Document>& CorpusIndex::documents() const { return storage_->docs; }

std::optional<DocId> CorpusIndex::find(std::string_view pmid) const {
  auto it = storage_->by_pmid.find(pmid);
  if (it == storage_->by_pmid.end()) return std::nullopt;
  return it->second;
}

const CorpusIndex::Postings& CorpusIndex::token_postings(IndexField field) const {
  return storage_->tokens[slot(field)];
}

const DocIds& CorpusIndex::postings(IndexField field, std::string_view token) const {
  static const DocIds kEmpty;
  const auto& p = storage_->tokens[slot(field)];
  auto it = p.find(token);
  return it == p.end() ? kEmpty : it->second;
}

DocIds CorpusIndex::prefix_postings(IndexField field, std::string_view prefix) const {
  const auto& p = storage_->tokens[slot(field)];
  DocIds out;
  for (auto it = p.lower_bound(prefix); it != p.end() && starts_with(it->first, prefix); ++it) {
    DocIds merged;
    std::set_union(out.begin(), out.end(), it->second.begin(), it->second.end(),
                   std::back_inserter(merged));
    out.swap(merged);
  }
  return out;
}

const std::vector<std::vector<std::string>>& CorpusIndex::sequences(IndexField field,
                                                                    DocId id) const {
  return storage_->sequences[slot(field)].at(id);
}

const CorpusIndex::Postings& CorpusIndex::descriptor_postings() const {
  return storage_->descriptors;
}
const CorpusIndex::Postings& CorpusIndex::subheading_postings() const {
  return storage_->subheadings;
}
const CorpusIndex::Postings& CorpusIndex::pub_type_postings() const { return storage_->pub_types; }

const MeshHierarchy* CorpusIndex::hierarchy() const {
  return storage_->hierarchy ? &*storage_->hierarchy : nullptr;
}

DocIds CorpusIndex::all_docs() const {
  DocIds ids(size());
  for (DocId i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

DocIds CorpusIndex::docs_on_or_before(const Date& cutoff) const {
  DocIds ids;
  for (DocId i = 0; i < size(); ++i) {
    if (storage_->docs[i].entry_date <= cutoff) ids.push_back(i);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Document ingestion

namespace {

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return {};
}

std::vector<std::string> string_list(const json& obj, const char* key, std::size_t line_no) {
  std::vector<std::string> out;
  if (!obj.contains(key) || obj[key].is_null()) return out;
  if (!obj[key].is_array()) {
    throw FormatError(fmt::format("line {}: '{}' must be an array of strings", line_no, key),
                      line_no);
  }
  for (const auto& v : obj[key]) {
    if (!v.is_string()) {
      throw FormatError(fmt::format("line {}: '{}' must be an array of strings", line_no, key),
                        line_no);
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string optional_string(const json& obj, const char* key, std::size_t line_no) {
  if (!obj.contains(key) || obj[key].is_null()) return {};
  if (!obj[key].is_string()) {
    throw FormatError(fmt::format("line {}: '{}' must be a string", line_no, key), line_no);
  }
  return obj[key].get<std::string>();
}

Document finish_document(Document d, std::size_t where, const char* unit) {
  if (d.pmid.empty()) {
    throw FormatError(fmt::format("{} {}: missing pmid", unit, where), where);
  }
  if (trim(d.title).empty() && trim(d.abstract).empty()) {
    throw FormatError(fmt::format("{} {}: pmid {} has neither title nor abstract", unit, where,
                                  d.pmid),
                      where);
  }
  return d;
}

std::vector<Document> read_jsonl_documents(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(fmt::format("line {}: malformed JSON: {}", line_no, e.what()), line_no);
    }
    if (!obj.is_object()) {
      throw FormatError(fmt::format("line {}: expected a JSON object", line_no), line_no);
    }
    Document d;
    d.pmid = obj.contains("pmid") ? id_string(obj["pmid"]) : std::string();
    d.title = optional_string(obj, "title", line_no);
    d.abstract = optional_string(obj, "abstract", line_no);
    d.mesh_headings = string_list(obj, "mesh", line_no);
    d.publication_types = string_list(obj, "pub_types", line_no);
    auto date = optional_string(obj, "entry_date", line_no);
    if (!Date::try_parse(date, &d.entry_date)) {
      throw FormatError(fmt::format("line {}: invalid or missing entry_date '{}'", line_no, date),
                        line_no);
    }
    docs.push_back(finish_document(std::move(d), line_no, "line"));
  }
  return docs;
}

// MEDLINE display format: `TAG - value` lines, 6-space continuation lines,
// blank lines between records.
std::vector<Document> read_medline_documents(std::istream& in) {
  std::vector<Document> docs;
  std::vector<std::pair<std::string, std::string>> fields;
  std::size_t record_no = 0;

  auto flush = [&] {
    if (fields.empty()) return;
    ++record_no;
    Document d;
    std::string edat, crdt, da;
    for (auto& [tag, value] : fields) {
      if (tag == "PMID") d.pmid = trim(value);
      else if (tag == "TI") d.title = value;
      else if (tag == "AB") d.abstract = value;
      else if (tag == "MH") d.mesh_headings.push_back(trim(value));
      else if (tag == "PT") d.publication_types.push_back(trim(value));
      else if (tag == "EDAT") edat = value;
      else if (tag == "CRDT") crdt = value;
      else if (tag == "DA") da = value;
    }
    auto pick = [](const std::string& v) { return v.substr(0, 10); };
    bool ok = false;
    if (!edat.empty()) ok = Date::try_parse(pick(edat), &d.entry_date);
    if (!ok && !crdt.empty()) ok = Date::try_parse(pick(crdt), &d.entry_date);
    if (!ok && da.size() == 8) {
      ok = Date::try_parse(da.substr(0, 4) + "-" + da.substr(4, 2) + "-" + da.substr(6, 2),
                           &d.entry_date);
    }
    if (!ok) {
      throw FormatError(fmt::format("record {}: no valid EDAT/CRDT/DA date", record_no),
                        record_no);
    }
    docs.push_back(finish_document(std::move(d), record_no, "record"));
    fields.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (line.size() > 6 && line.compare(0, 6, "      ") == 0) {
      if (fields.empty()) {
        throw FormatError(fmt::format("record {}: continuation line before any tag", record_no + 1),
                          record_no + 1);
      }
      fields.back().second += " " + trim(line);
      continue;
    }
    auto dash = line.find('-');
    if (dash == std::string::npos || dash > 4) {
      throw FormatError(fmt::format("record {}: malformed line '{}'", record_no + 1, line),
                        record_no + 1);
    }
    fields.emplace_back(trim(line.substr(0, dash)), trim(line.substr(dash + 1)));
  }
  flush();
  return docs;
}

}  // namespace

std::vector<Document> read_documents(std::istream& in, DocumentFormat format) {
  return format == DocumentFormat::kJsonl ? read_jsonl_documents(in) : read_medline_documents(in);
}

std::vector<Document> read_documents(const std::filesystem::path& path, DocumentFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open documents file " + path.string());
  return read_documents(in, format);
}

CorpusIndex ingest_documents(const std::filesystem::path& path, DocumentFormat format,
                             std::optional<MeshHierarchy> hierarchy) {
  return CorpusIndex::build(read_documents(path, format), std::move(hierarchy));
}

// ---------------------------------------------------------------------------
// Topics

const std::vector<std::string>& clef_duplicate_topic_ids() {
  static const std::vector<std::string> kIds{"CD010771", "CD011145", "CD010772", "CD010775",
                                             "CD010783", "CD010896", "CD007431", "CD010860"};
  return kIds;
}

const std::vector<std::vector<std::string>>& seed_merge_groups() {
  static const std::vector<std::vector<std::string>> kGroups{
      {"51", "52", "53"}, {"43", "96"}, {"7", "67"}, {"8", "112"}};
  return kGroups;
}

std::vector<Topic> read_topics(std::istream& in, TopicCollection collection) {
  std::vector<Topic> topics;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(fmt::format("line {}: malformed JSON: {}", line_no, e.what()), line_no);
    }
    if (!obj.is_object()) {
      throw FormatError(fmt::format("line {}: expected a JSON object", line_no), line_no);
    }
    Topic t;
    t.topic_id = obj.contains("topic_id") ? id_string(obj["topic_id"]) : std::string();
    if (t.topic_id.empty()) {
      throw FormatError(fmt::format("line {}: missing topic_id", line_no), line_no);
    }
    if (!seen.insert(t.topic_id).second) {
      throw FormatError(fmt::format("line {}: duplicate topic_id {}", line_no, t.topic_id),
                        line_no);
    }
    t.title = optional_string(obj, "title", line_no);
    auto date = optional_string(obj, "search_date", line_no);
    if (!Date::try_parse(date, &t.search_date)) {
      throw FormatError(fmt::format("line {}: invalid or missing search_date '{}'", line_no, date),
                        line_no);
    }
    if (obj.contains("seed_pmids") && obj["seed_pmids"].is_array()) {
      for (const auto& v : obj["seed_pmids"]) {
        auto id = id_string(v);
        if (id.empty()) {
          throw FormatError(fmt::format("line {}: bad seed pmid", line_no), line_no);
        }
        t.seed_pmids.push_back(std::move(id));
      }
    }
    if (obj.contains("baseline_queries") && obj["baseline_queries"].is_object()) {
      for (const auto& [role, q] : obj["baseline_queries"].items()) {
        if (q.is_string()) t.baseline_queries[role] = q.get<std::string>();
      }
    }
    topics.push_back(std::move(t));
  }

  switch (collection) {
    case TopicCollection::kSeedOriginal:
      break;
    case TopicCollection::kClefTar: {
      const auto& drop = clef_duplicate_topic_ids();
      std::erase_if(topics, [&](const Topic& t) {
        return std::find(drop.begin(), drop.end(), t.topic_id) != drop.end();
      });
      break;
    }
    case TopicCollection::kSeedDedup: {
      auto find = [&](const std::string& id) {
        auto it = std::find_if(topics.begin(), topics.end(),
                               [&](const Topic& t) { return t.topic_id == id; });
        if (it == topics.end()) {
          throw FormatError(fmt::format("merge target topic {} missing from file", id), 0);
        }
        return it;
      };
      for (const auto& group : seed_merge_groups()) {
        for (const auto& id : group) find(id);
        auto keep = find(group.front());
        std::set<std::string> have(keep->seed_pmids.begin(), keep->seed_pmids.end());
        for (std::size_t i = 1; i < group.size(); ++i) {
          for (const auto& p : find(group[i])->seed_pmids) {
            if (have.insert(p).second) find(group.front())->seed_pmids.push_back(p);
          }
        }
        for (std::size_t i = 1; i < group.size(); ++i) topics.erase(find(group[i]));
      }
      break;
    }
  }
  return topics;
}

std::vector<Topic> ingest_topics(const std::filesystem::path& path, TopicCollection collection) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topics file " + path.string());
  return read_topics(in, collection);
}

// ---------------------------------------------------------------------------
// Qrels

Qrels read_qrels(std::istream& in) {
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(std::move(f));
    if (parts.empty()) continue;
    if (parts.size() != 4) {
      throw FormatError(
          fmt::format("line {}: expected 'topic_id 0 pmid relevance', got {} fields", line_no,
                      parts.size()),
          line_no);
    }
    int relevance = 0;
    const auto& rel = parts[3];
    auto [ptr, ec] = std::from_chars(rel.data(), rel.data() + rel.size(), relevance);
    if (ec != std::errc() || ptr != rel.data() + rel.size()) {
      throw FormatError(fmt::format("line {}: non-integer relevance '{}'", line_no, rel), line_no);
    }
    auto& set = qrels.judgments[parts[0]];
    if (relevance > 0) set.insert(parts[2]);
  }
  return qrels;
}

Qrels ingest_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open qrels file " + path.string());
  return read_qrels(in);
}

Qrels dedup_seed_qrels(const Qrels& qrels) {
  Qrels out = qrels;
  for (const auto& group : seed_merge_groups()) {
    bool present = std::any_of(group.begin(), group.end(),
                               [&](const std::string& id) { return out.judgments.contains(id); });
    if (!present) continue;
    auto& keep = out.judgments[group.front()];
    for (std::size_t i = 1; i < group.size(); ++i) {
      auto it = out.judgments.find(group[i]);
      if (it == out.judgments.end()) continue;
      keep.insert(it->second.begin(), it->second.end());
      out.judgments.erase(it);
    }
  }
  return out;
}

}  // namespace boolgen
