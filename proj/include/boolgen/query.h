#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace boolgen {

enum class CanonicalField {
  kMesh,
  kMeshNoExp,
  kTitleAbstract,
  kAllFields,
  kSubheading,
  kPubType,
  kFilter,
  kUnknown,
};

std::string_view to_string(CanonicalField field);

// A field tag as written plus its canonical meaning. An untagged term has an
// empty `raw` and canonical kAllFields.
struct FieldTag {
  std::string raw;
  CanonicalField canonical = CanonicalField::kAllFields;

  static FieldTag from_raw(std::string_view raw);
  static FieldTag untagged() { return {}; }
  bool tagged() const { return !raw.empty(); }

  friend bool operator==(const FieldTag&, const FieldTag&) = default;
};

enum class Operator { kAnd, kOr, kNot };

std::string_view to_string(Operator op);

struct QueryNode;
using QueryPtr = std::shared_ptr<const QueryNode>;

struct Term {
  std::string text;  // never ends with '*'; a trailing star sets `wildcard`
  bool phrase = false;
  bool wildcard = false;
  FieldTag field;

  friend bool operator==(const Term&, const Term&) = default;
};

struct OpNode {
  Operator op;
  QueryPtr left;
  QueryPtr right;
};

// Immutable Boolean query tree. Operator nodes are strictly binary; NOT is
// set difference (left NOT right).
struct QueryNode {
  std::variant<Term, OpNode> node;

  bool is_term() const { return std::holds_alternative<Term>(node); }
  const Term& term() const { return std::get<Term>(node); }
  const OpNode& op() const { return std::get<OpNode>(node); }
  std::size_t depth() const;
};

bool operator==(const QueryNode& a, const QueryNode& b);

QueryPtr make_term(std::string text, FieldTag field = FieldTag::untagged(), bool phrase = false,
                   bool wildcard = false);
QueryPtr make_op(Operator op, QueryPtr left, QueryPtr right);

// ---------------------------------------------------------------------------
// Lexing

enum class TokenKind { kLParen, kRParen, kOperator, kInvalidOperator, kTerm };

struct Token {
  TokenKind kind;
  std::size_t offset = 0;  // byte offset in the original text
  std::string text;        // source slice (operators, invalid operators)
  Operator op = Operator::kAnd;
  Term term;

  friend bool operator==(const Token&, const Token&) = default;
};

// Strict lexing: throws LexError on an unterminated quote, an empty term, or
// a field tag that does not follow a term.
std::vector<Token> tokenize(std::string_view query_text);

// Never throws. Unterminated quotes run to the end of input and stray tags
// are dropped. This is what the rule checker sees.
std::vector<Token> tokenize_lenient(std::string_view query_text);

// ---------------------------------------------------------------------------
// Rule checking

enum class Rule { kUnbalancedBrackets, kInvalidOperator, kConsecutiveOperators, kDanglingOperator };

std::string_view to_string(Rule rule);

struct Violation {
  Rule rule;
  std::size_t position;
  std::string detail;
};

struct ValidityReport {
  bool valid = true;
  std::vector<Violation> violations;

  bool has(Rule rule) const;
};

// Applies the four syntax rules and nothing else:
//   1. every bracket is closed (and no bracket closes what was never opened)
//   2. only AND, OR, NOT are operators
//   3. no two operators in a row
//   4. an operator follows a term or a closing bracket
ValidityReport check_rules(std::string_view query_text);

// ---------------------------------------------------------------------------
// Parsing and serialization

enum class Precedence {
  kLeftToRight,  // how PubMed evaluates unparenthesized queries
  kNotAndOr,     // NOT binds tightest, then AND, then OR
};

// Throws ParseError if the query fails check_rules or the grammar.
QueryPtr parse(std::string_view query_text, Precedence mode = Precedence::kLeftToRight);

// Fully parenthesized text with ASCII quotes and uppercase operators.
std::string serialize(const QueryNode& node);

// Left-nested OR of every query. A single query is returned unchanged.
QueryPtr combine_or(std::span<const QueryPtr> queries);

}  // namespace boolgen
