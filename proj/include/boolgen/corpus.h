#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "boolgen/date.h"

namespace boolgen {

struct Document {
  std::string pmid;
  std::string title;
  std::string abstract;
  std::vector<std::string> mesh_headings;
  std::vector<std::string> publication_types;
  Date entry_date;
};

struct Topic {
  std::string topic_id;
  std::string title;
  Date search_date;
  std::vector<std::string> seed_pmids;
  // role ("manual", "conceptual", "objective") -> query text
  std::map<std::string, std::string> baseline_queries;
};

// topic id -> relevant pmids. A topic whose lines all carry relevance 0 is
// present with an empty set.
struct Qrels {
  std::map<std::string, std::set<std::string>> judgments;

  const std::set<std::string>& relevant(const std::string& topic_id) const;
};

enum class DocumentFormat { kJsonl, kMedlineText };
enum class TopicCollection { kClefTar, kSeedOriginal, kSeedDedup };

DocumentFormat parse_document_format(std::string_view name);
TopicCollection parse_topic_collection(std::string_view name);

// Optional MeSH tree: child heading -> parent headings. Loaded from a TSV file
// with one `child<TAB>parent` pair per line.
class MeshHierarchy {
 public:
  void add(std::string_view child, std::string_view parent);
  static MeshHierarchy load(const std::filesystem::path& path);

  // Normalized headings reachable upward from `heading`, including itself.
  std::set<std::string> ancestors_or_self(std::string_view heading) const;
  // Normalized headings reachable downward from `heading`, including itself.
  std::set<std::string> descendants_or_self(std::string_view heading) const;
  bool empty() const { return parents_.empty(); }

 private:
  std::map<std::string, std::set<std::string>> parents_;
  std::map<std::string, std::set<std::string>> children_;
};

using DocId = std::uint32_t;
// Sorted, duplicate-free list of document ordinals.
using DocIds = std::vector<DocId>;

// Token-level fields. Each holds one token sequence per field value (one for
// title/abstract, one per heading or publication type).
enum class IndexField { kTitle, kAbstract, kMesh, kPubType };
inline constexpr IndexField kAllIndexFields[] = {IndexField::kTitle, IndexField::kAbstract,
                                                 IndexField::kMesh, IndexField::kPubType};

// Immutable field-scoped inverted index. Documents are ordered by pmid, so a
// DocId is also the rank of the pmid in lexicographic order. Copies share
// the same underlying storage.
class CorpusIndex {
 public:
  using Postings = std::map<std::string, DocIds, std::less<>>;

  CorpusIndex();
  // Throws DuplicatePmid.
  static CorpusIndex build(std::vector<Document> docs,
                           std::optional<MeshHierarchy> hierarchy = std::nullopt);

  std::size_t size() const;
  const Document& doc(DocId id) const;
  const std::vector<Document>& documents() const;
  std::optional<DocId> find(std::string_view pmid) const;

  const Postings& token_postings(IndexField field) const;
  const DocIds& postings(IndexField field, std::string_view token) const;
  // Union of postings for every token starting with `prefix`.
  DocIds prefix_postings(IndexField field, std::string_view prefix) const;
  const std::vector<std::vector<std::string>>& sequences(IndexField field, DocId id) const;

  // Normalized descriptor (text before the first '/') -> docs.
  const Postings& descriptor_postings() const;
  // Normalized subheading text (everything after the first '/') -> docs.
  const Postings& subheading_postings() const;
  const Postings& pub_type_postings() const;
  const MeshHierarchy* hierarchy() const;

  DocIds all_docs() const;
  DocIds docs_on_or_before(const Date& cutoff) const;

 private:
  struct Storage;
  std::shared_ptr<const Storage> storage_;
};

std::vector<Document> read_documents(std::istream& in, DocumentFormat format);
std::vector<Document> read_documents(const std::filesystem::path& path, DocumentFormat format);
CorpusIndex ingest_documents(const std::filesystem::path& path, DocumentFormat format,
                             std::optional<MeshHierarchy> hierarchy = std::nullopt);

std::vector<Topic> read_topics(std::istream& in, TopicCollection collection);
std::vector<Topic> ingest_topics(const std::filesystem::path& path, TopicCollection collection);

Qrels read_qrels(std::istream& in);
Qrels ingest_qrels(const std::filesystem::path& path);

// Topic ids removed from the combined CLEF TAR 2017+2018 topic set.
const std::vector<std::string>& clef_duplicate_topic_ids();
// Seed-collection merge groups; the first id of each group survives.
const std::vector<std::vector<std::string>>& seed_merge_groups();
// Applies the seed merge groups to judgments (union into the surviving id).
Qrels dedup_seed_qrels(const Qrels& qrels);

}  // namespace boolgen
