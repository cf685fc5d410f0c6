#include "boolgen/matcher.h"

#include <algorithm>
#include <iterator>

#include "boolgen/text.h"

namespace boolgen {

RetrievalResult RetrievalResult::from_pmids(std::set<std::string> pmids) {
  RetrievalResult r;
  r.count = pmids.size();
  r.pmids = std::move(pmids);
  return r;
}

namespace {

struct Pattern {
  std::vector<std::string> tokens;
  bool wildcard = false;
};

Pattern token_pattern(const Term& t) { return {normalize_tokens(t.text), t.wildcard}; }

bool token_matches(const std::string& token, const std::string& want, bool prefix) {
  return prefix ? starts_with(token, want) : token == want;
}

// Contiguous occurrence of the pattern; only the last token may be a prefix.
bool sequence_contains(const std::vector<std::string>& seq, const Pattern& p) {
  const std::size_t k = p.tokens.size();
  if (k == 0 || seq.size() < k) return false;
  for (std::size_t start = 0; start + k <= seq.size(); ++start) {
    bool ok = true;
    for (std::size_t i = 0; i < k && ok; ++i) {
      ok = token_matches(seq[start + i], p.tokens[i], p.wildcard && i + 1 == k);
    }
    if (ok) return true;
  }
  return false;
}

bool heading_matches(const std::string& heading, const std::string& target, bool prefix) {
  return prefix ? starts_with(heading, target) : heading == target;
}

enum class Scope { kTitleAbstract, kAllFields, kMesh, kMeshNoExp, kSubheading, kPubType };

Scope scope_of(CanonicalField f) {
  switch (f) {
    case CanonicalField::kTitleAbstract: return Scope::kTitleAbstract;
    case CanonicalField::kMesh: return Scope::kMesh;
    case CanonicalField::kMeshNoExp: return Scope::kMeshNoExp;
    case CanonicalField::kSubheading: return Scope::kSubheading;
    case CanonicalField::kPubType: return Scope::kPubType;
    case CanonicalField::kAllFields:
    case CanonicalField::kFilter:
    case CanonicalField::kUnknown: return Scope::kAllFields;
  }
  return Scope::kAllFields;
}

std::vector<IndexField> token_fields(Scope scope) {
  if (scope == Scope::kTitleAbstract) return {IndexField::kTitle, IndexField::kAbstract};
  return {std::begin(kAllIndexFields), std::end(kAllIndexFields)};
}

DocIds unite(const DocIds& a, const DocIds& b) {
  DocIds out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

DocIds intersect(const DocIds& a, const DocIds& b) {
  DocIds out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

DocIds subtract(const DocIds& a, const DocIds& b) {
  DocIds out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// ---------------------------------------------------------------------------
// Index path

DocIds index_token_field(const CorpusIndex& index, IndexField field, const Pattern& p) {
  if (p.tokens.empty()) return {};
  DocIds candidates = p.wildcard ? index.prefix_postings(field, p.tokens.back())
                                 : index.postings(field, p.tokens.back());
  if (p.tokens.size() == 1) return candidates;
  for (std::size_t i = 0; i + 1 < p.tokens.size() && !candidates.empty(); ++i) {
    candidates = intersect(candidates, index.postings(field, p.tokens[i]));
  }
  DocIds out;
  for (DocId id : candidates) {
    for (const auto& seq : index.sequences(field, id)) {
      if (sequence_contains(seq, p)) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

DocIds index_keyed(const CorpusIndex::Postings& postings, const std::string& target, bool prefix) {
  if (target.empty()) return {};
  if (!prefix) {
    auto it = postings.find(target);
    return it == postings.end() ? DocIds{} : it->second;
  }
  DocIds out;
  for (auto it = postings.lower_bound(target); it != postings.end() && starts_with(it->first, target);
       ++it) {
    out = unite(out, it->second);
  }
  return out;
}

DocIds index_term(const Term& t, const CorpusIndex& index) {
  const Scope scope = scope_of(t.field.canonical);
  const std::string target = normalize_heading(t.text);
  switch (scope) {
    case Scope::kTitleAbstract:
    case Scope::kAllFields: {
      const Pattern p = token_pattern(t);
      DocIds out;
      for (IndexField f : token_fields(scope)) out = unite(out, index_token_field(index, f, p));
      return out;
    }
    case Scope::kMesh:
    case Scope::kMeshNoExp: {
      const MeshHierarchy* h = index.hierarchy();
      if (scope == Scope::kMeshNoExp || !h || h->empty()) {
        return index_keyed(index.descriptor_postings(), target, t.wildcard);
      }
      if (target.empty()) return {};
      DocIds out;
      for (const auto& [descriptor, ids] : index.descriptor_postings()) {
        for (const auto& name : h->ancestors_or_self(descriptor)) {
          if (heading_matches(name, target, t.wildcard)) {
            out = unite(out, ids);
            break;
          }
        }
      }
      return out;
    }
    case Scope::kSubheading: {
      if (target.empty()) return {};
      DocIds out;
      for (const auto& [sub, ids] : index.subheading_postings()) {
        if (sub.find(target) != std::string::npos) out = unite(out, ids);
      }
      return out;
    }
    case Scope::kPubType:
      return index_keyed(index.pub_type_postings(), target, t.wildcard);
  }
  return {};
}

DocIds index_eval(const QueryNode& node, const CorpusIndex& index, const DocIds* allowed) {
  if (node.is_term()) {
    DocIds ids = index_term(node.term(), index);
    return allowed ? intersect(ids, *allowed) : ids;
  }
  const OpNode& op = node.op();
  DocIds left = index_eval(*op.left, index, allowed);
  DocIds right = index_eval(*op.right, index, allowed);
  switch (op.op) {
    case Operator::kAnd: return intersect(left, right);
    case Operator::kOr: return unite(left, right);
    case Operator::kNot: return subtract(left, right);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Document path

bool any_value_contains(const std::vector<std::string>& values, const Pattern& p) {
  return std::any_of(values.begin(), values.end(), [&](const std::string& v) {
    return sequence_contains(normalize_tokens(v), p);
  });
}

bool doc_term(const Term& t, const Document& doc, const MeshHierarchy* hierarchy) {
  const Scope scope = scope_of(t.field.canonical);
  const std::string target = normalize_heading(t.text);
  switch (scope) {
    case Scope::kTitleAbstract:
    case Scope::kAllFields: {
      const Pattern p = token_pattern(t);
      if (sequence_contains(normalize_tokens(doc.title), p)) return true;
      if (sequence_contains(normalize_tokens(doc.abstract), p)) return true;
      if (scope == Scope::kTitleAbstract) return false;
      return any_value_contains(doc.mesh_headings, p) ||
             any_value_contains(doc.publication_types, p);
    }
    case Scope::kMesh:
    case Scope::kMeshNoExp: {
      if (target.empty()) return false;
      const bool explode = scope == Scope::kMesh && hierarchy && !hierarchy->empty();
      for (const auto& h : doc.mesh_headings) {
        auto descriptor = normalize_heading(h.substr(0, h.find('/')));
        if (descriptor.empty()) continue;
        if (!explode) {
          if (heading_matches(descriptor, target, t.wildcard)) return true;
          continue;
        }
        for (const auto& name : hierarchy->ancestors_or_self(descriptor)) {
          if (heading_matches(name, target, t.wildcard)) return true;
        }
      }
      return false;
    }
    case Scope::kSubheading: {
      if (target.empty()) return false;
      for (const auto& h : doc.mesh_headings) {
        auto slash = h.find('/');
        if (slash == std::string::npos) continue;
        if (normalize_heading(h.substr(slash + 1)).find(target) != std::string::npos) return true;
      }
      return false;
    }
    case Scope::kPubType: {
      if (target.empty()) return false;
      return std::any_of(doc.publication_types.begin(), doc.publication_types.end(),
                         [&](const std::string& p) {
                           return heading_matches(normalize_heading(p), target, t.wildcard);
                         });
    }
  }
  return false;
}

}  // namespace

bool match_document(const QueryNode& node, const Document& doc, const MeshHierarchy* hierarchy) {
  if (node.is_term()) return doc_term(node.term(), doc, hierarchy);
  const OpNode& op = node.op();
  const bool left = match_document(*op.left, doc, hierarchy);
  switch (op.op) {
    case Operator::kAnd: return left && match_document(*op.right, doc, hierarchy);
    case Operator::kOr: return left || match_document(*op.right, doc, hierarchy);
    case Operator::kNot: return left && !match_document(*op.right, doc, hierarchy);
  }
  return false;
}

DocIds evaluate_ids(const QueryNode& node, const CorpusIndex& index, std::optional<Date> cutoff) {
  if (!cutoff) return index_eval(node, index, nullptr);
  const DocIds allowed = index.docs_on_or_before(*cutoff);
  return index_eval(node, index, &allowed);
}

std::set<std::string> to_pmids(const DocIds& ids, const CorpusIndex& index) {
  std::set<std::string> out;
  for (DocId id : ids) out.insert(index.doc(id).pmid);
  return out;
}

RetrievalResult evaluate(const QueryNode& node, const CorpusIndex& index,
                         std::optional<Date> cutoff) {
  return RetrievalResult::from_pmids(to_pmids(evaluate_ids(node, index, cutoff), index));
}

DocIds scan_serial(const QueryNode& node, const CorpusIndex& index, std::optional<Date> cutoff) {
  DocIds out;
  for (DocId id = 0; id < index.size(); ++id) {
    const Document& d = index.doc(id);
    if (cutoff && d.entry_date > *cutoff) continue;
    if (match_document(node, d, index.hierarchy())) out.push_back(id);
  }
  return out;
}

DocIds scan_parallel(const QueryNode& node, const CorpusIndex& index, std::optional<Date> cutoff) {
  const auto n = static_cast<std::int64_t>(index.size());
  std::vector<unsigned char> hit(index.size(), 0);
  const MeshHierarchy* hierarchy = index.hierarchy();
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i) {
    const Document& d = index.doc(static_cast<DocId>(i));
    if (cutoff && d.entry_date > *cutoff) continue;
    hit[i] = match_document(node, d, hierarchy) ? 1 : 0;
  }
  DocIds out;
  for (std::int64_t i = 0; i < n; ++i) {
    if (hit[i]) out.push_back(static_cast<DocId>(i));
  }
  return out;
}

}  // namespace boolgen
