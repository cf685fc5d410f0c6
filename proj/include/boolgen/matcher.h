#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>

#include "boolgen/corpus.h"
#include "boolgen/query.h"

namespace boolgen {

struct RetrievalResult {
  std::set<std::string> pmids;
  std::size_t count = 0;
  // True when `count` exceeds the number of pmids actually returned.
  bool truncated = false;

  static RetrievalResult from_pmids(std::set<std::string> pmids);
};

// Index-backed set evaluation. The date cutoff restricts every term to
// documents with entry_date <= cutoff before operators are applied.
DocIds evaluate_ids(const QueryNode& node, const CorpusIndex& index,
                    std::optional<Date> cutoff = std::nullopt);
RetrievalResult evaluate(const QueryNode& node, const CorpusIndex& index,
                         std::optional<Date> cutoff = std::nullopt);

// Predicate evaluation of a single document, computed from the raw document
// text without touching any index.
bool match_document(const QueryNode& node, const Document& doc,
                    const MeshHierarchy* hierarchy = nullptr);

// Reference kernels: test every document with match_document. The serial
// version is the oracle; the parallel one splits the document loop across
// OpenMP threads and must produce identical ids.
DocIds scan_serial(const QueryNode& node, const CorpusIndex& index,
                   std::optional<Date> cutoff = std::nullopt);
DocIds scan_parallel(const QueryNode& node, const CorpusIndex& index,
                     std::optional<Date> cutoff = std::nullopt);

std::set<std::string> to_pmids(const DocIds& ids, const CorpusIndex& index);

}  // namespace boolgen
