#include "boolgen/query.h"

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>

#include <fmt/format.h>

#include "boolgen/error.h"
#include "boolgen/text.h"

namespace boolgen {

std::string_view to_string(CanonicalField field) {
  switch (field) {
    case CanonicalField::kMesh: return "mesh";
    case CanonicalField::kMeshNoExp: return "mesh_noexp";
    case CanonicalField::kTitleAbstract: return "title_abstract";
    case CanonicalField::kAllFields: return "all_fields";
    case CanonicalField::kSubheading: return "subheading";
    case CanonicalField::kPubType: return "pub_type";
    case CanonicalField::kFilter: return "filter";
    case CanonicalField::kUnknown: return "unknown";
  }
  return "unknown";
}

FieldTag FieldTag::from_raw(std::string_view raw) {
  static const std::pair<std::string_view, CanonicalField> kTable[] = {
      {"mesh", CanonicalField::kMesh},
      {"mh", CanonicalField::kMesh},
      {"mesh terms", CanonicalField::kMesh},
      {"mesh term", CanonicalField::kMesh},
      {"majr", CanonicalField::kMesh},
      {"mesh major topic", CanonicalField::kMesh},
      {"mesh:noexp", CanonicalField::kMeshNoExp},
      {"mh:noexp", CanonicalField::kMeshNoExp},
      {"mesh terms:noexp", CanonicalField::kMeshNoExp},
      {"majr:noexp", CanonicalField::kMeshNoExp},
      {"tiab", CanonicalField::kTitleAbstract},
      {"title/abstract", CanonicalField::kTitleAbstract},
      {"ti", CanonicalField::kTitleAbstract},
      {"title", CanonicalField::kTitleAbstract},
      {"ab", CanonicalField::kTitleAbstract},
      {"abstract", CanonicalField::kTitleAbstract},
      {"all fields", CanonicalField::kAllFields},
      {"all", CanonicalField::kAllFields},
      {"sh", CanonicalField::kSubheading},
      {"subheading", CanonicalField::kSubheading},
      {"sh:noexp", CanonicalField::kSubheading},
      {"pt", CanonicalField::kPubType},
      {"ptyp", CanonicalField::kPubType},
      {"publication type", CanonicalField::kPubType},
      {"sb", CanonicalField::kFilter},
      {"filter", CanonicalField::kFilter},
  };
  FieldTag tag;
  tag.raw = std::string(raw);
  tag.canonical = CanonicalField::kUnknown;
  const std::string key = normalize_heading(raw);
  for (const auto& [name, canonical] : kTable) {
    if (key == name) {
      tag.canonical = canonical;
      break;
    }
  }
  return tag;
}

std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::kAnd: return "AND";
    case Operator::kOr: return "OR";
    case Operator::kNot: return "NOT";
  }
  return "AND";
}

std::size_t QueryNode::depth() const {
  if (is_term()) return 1;
  return 1 + std::max(op().left->depth(), op().right->depth());
}

bool operator==(const QueryNode& a, const QueryNode& b) {
  if (a.is_term() != b.is_term()) return false;
  if (a.is_term()) return a.term() == b.term();
  const auto& x = a.op();
  const auto& y = b.op();
  return x.op == y.op && *x.left == *y.left && *x.right == *y.right;
}

QueryPtr make_term(std::string text, FieldTag field, bool phrase, bool wildcard) {
  return std::make_shared<const QueryNode>(
      QueryNode{Term{std::move(text), phrase, wildcard, std::move(field)}});
}

QueryPtr make_op(Operator op, QueryPtr left, QueryPtr right) {
  return std::make_shared<const QueryNode>(QueryNode{OpNode{op, std::move(left), std::move(right)}});
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

// Byte length of a straight or typographic double quote at `i`, else 0.
std::size_t quote_len(std::string_view s, std::size_t i) {
  if (s[i] == '"') return 1;
  if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
      static_cast<unsigned char>(s[i + 1]) == 0x80) {
    auto c = static_cast<unsigned char>(s[i + 2]);
    if (c == 0x9C || c == 0x9D || c == 0x9E) return 3;
  }
  return 0;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool ends_word(std::string_view s, std::size_t i) {
  char c = s[i];
  return is_space(c) || c == '(' || c == ')' || c == '[' || quote_len(s, i) > 0;
}

std::optional<Operator> operator_word(std::string_view w) {
  auto lower = to_lower(w);
  if (lower == "and") return Operator::kAnd;
  if (lower == "or") return Operator::kOr;
  if (lower == "not") return Operator::kNot;
  return std::nullopt;
}

// Operators from other search dialects. Case-sensitive so that ordinary
// words ("near", "nor") stay terms.
bool invalid_operator_word(std::string_view w) {
  static const std::regex kPattern(R"((NEAR|ADJ|XOR|NAND|NOR|SAME)(/?[0-9]+)?|&|&&|\||\|\||!)");
  return std::regex_match(w.begin(), w.end(), kPattern);
}

class Lexer {
 public:
  Lexer(std::string_view text, bool lenient) : s_(text), lenient_(lenient) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      if (i_ >= s_.size()) break;
      const std::size_t start = i_;
      const char c = s_[i_];
      if (c == '(' || c == ')') {
        Token t;
        t.kind = c == '(' ? TokenKind::kLParen : TokenKind::kRParen;
        t.offset = start;
        t.text = std::string(1, c);
        out.push_back(std::move(t));
        ++i_;
      } else if (std::size_t ql = quote_len(s_, i_)) {
        out.push_back(quoted(start, ql));
      } else if (c == '[') {
        if (!lenient_) throw LexError("field tag without a term", start);
        auto close = s_.find(']', i_);
        i_ = close == std::string_view::npos ? s_.size() : close + 1;
      } else {
        lex_words(start, out);
      }
    }
    return out;
  }

 private:
  void skip_space() {
    while (i_ < s_.size() && is_space(s_[i_])) ++i_;
  }

  std::string_view read_word() {
    std::size_t b = i_;
    while (i_ < s_.size() && !ends_word(s_, i_)) ++i_;
    return s_.substr(b, i_ - b);
  }

  Token quoted(std::size_t start, std::size_t open_len) {
    std::size_t j = start + open_len;
    std::size_t k = j;
    while (k < s_.size() && quote_len(s_, k) == 0) ++k;
    std::string content;
    if (k >= s_.size()) {
      if (!lenient_) throw LexError("unterminated quote", start);
      content = std::string(s_.substr(j));
      i_ = s_.size();
    } else {
      content = std::string(s_.substr(j, k - j));
      i_ = k + quote_len(s_, k);
    }
    return make_term_token(start, trim(content), /*phrase=*/true);
  }

  void lex_words(std::size_t start, std::vector<Token>& out) {
    std::string_view word = read_word();
    if (auto op = operator_word(word)) {
      Token t;
      t.kind = TokenKind::kOperator;
      t.offset = start;
      t.text = std::string(word);
      t.op = *op;
      out.push_back(std::move(t));
      return;
    }
    if (invalid_operator_word(word)) {
      Token t;
      t.kind = TokenKind::kInvalidOperator;
      t.offset = start;
      t.text = std::string(word);
      out.push_back(std::move(t));
      return;
    }
    // Bare words up to the next operator, bracket, quote, or tag form one
    // term; several words make a phrase.
    std::vector<std::string_view> words{word};
    while (true) {
      std::size_t save = i_;
      skip_space();
      if (i_ >= s_.size() || ends_word(s_, i_)) {
        i_ = save;
        break;
      }
      std::string_view next = read_word();
      if (operator_word(next) || invalid_operator_word(next)) {
        i_ = save;
        break;
      }
      words.push_back(next);
    }
    std::string text;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) text.push_back(' ');
      text.append(words[w]);
    }
    out.push_back(make_term_token(start, std::move(text), words.size() > 1));
  }

  Token make_term_token(std::size_t start, std::string text, bool phrase) {
    Token t;
    t.kind = TokenKind::kTerm;
    t.offset = start;
    bool wildcard = false;
    while (!text.empty() && text.back() == '*') {
      text.pop_back();
      wildcard = true;
    }
    text = trim(text);
    if (text.empty() && !lenient_) throw LexError("empty term", start);
    t.term.text = std::move(text);
    t.term.phrase = phrase;
    t.term.wildcard = wildcard;
    t.term.field = read_tag();
    t.text = std::string(s_.substr(start, i_ - start));
    return t;
  }

  FieldTag read_tag() {
    std::size_t save = i_;
    skip_space();
    if (i_ >= s_.size() || s_[i_] != '[') {
      i_ = save;
      return FieldTag::untagged();
    }
    std::size_t open = i_;
    auto close = s_.find(']', open);
    if (close == std::string_view::npos) {
      if (!lenient_) throw LexError("unterminated field tag", open);
      i_ = s_.size();
      return FieldTag::from_raw(s_.substr(open + 1));
    }
    i_ = close + 1;
    return FieldTag::from_raw(s_.substr(open + 1, close - open - 1));
  }

  std::string_view s_;
  bool lenient_;
  std::size_t i_ = 0;
};

}  // namespace

std::vector<Token> tokenize(std::string_view query_text) {
  return Lexer(query_text, /*lenient=*/false).run();
}

std::vector<Token> tokenize_lenient(std::string_view query_text) {
  return Lexer(query_text, /*lenient=*/true).run();
}

// ---------------------------------------------------------------------------
// Rule checker

std::string_view to_string(Rule rule) {
  switch (rule) {
    case Rule::kUnbalancedBrackets: return "UnbalancedBrackets";
    case Rule::kInvalidOperator: return "InvalidOperator";
    case Rule::kConsecutiveOperators: return "ConsecutiveOperators";
    case Rule::kDanglingOperator: return "DanglingOperator";
  }
  return "";
}

bool ValidityReport::has(Rule rule) const {
  return std::any_of(violations.begin(), violations.end(),
                     [rule](const Violation& v) { return v.rule == rule; });
}

ValidityReport check_rules(std::string_view query_text) {
  enum class Prev { kStart, kTerm, kOpen, kClose, kOperator };
  ValidityReport report;
  std::vector<std::size_t> open;
  Prev prev = Prev::kStart;
  std::string prev_text;

  for (const Token& tok : tokenize_lenient(query_text)) {
    switch (tok.kind) {
      case TokenKind::kLParen:
        open.push_back(tok.offset);
        prev = Prev::kOpen;
        break;
      case TokenKind::kRParen:
        if (open.empty()) {
          report.violations.push_back(
              {Rule::kUnbalancedBrackets, tok.offset, "closing bracket without a matching opening"});
        } else {
          open.pop_back();
        }
        prev = Prev::kClose;
        break;
      case TokenKind::kOperator:
      case TokenKind::kInvalidOperator:
        if (tok.kind == TokenKind::kInvalidOperator) {
          report.violations.push_back(
              {Rule::kInvalidOperator, tok.offset,
               fmt::format("'{}' is not one of AND, OR, NOT", tok.text)});
        }
        if (prev == Prev::kOperator) {
          report.violations.push_back({Rule::kConsecutiveOperators, tok.offset,
                                       fmt::format("'{}' directly follows '{}'", tok.text,
                                                   prev_text)});
        } else if (prev == Prev::kStart || prev == Prev::kOpen) {
          report.violations.push_back(
              {Rule::kDanglingOperator, tok.offset,
               fmt::format("'{}' is not preceded by a term or closing bracket", tok.text)});
        }
        prev = Prev::kOperator;
        prev_text = tok.text;
        break;
      case TokenKind::kTerm:
        prev = Prev::kTerm;
        break;
    }
  }
  for (std::size_t offset : open) {
    report.violations.push_back({Rule::kUnbalancedBrackets, offset, "bracket is never closed"});
  }
  report.valid = report.violations.empty();
  return report;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
 public:
  Parser(std::vector<Token> tokens, std::size_t end_offset, Precedence mode)
      : toks_(std::move(tokens)), end_(end_offset), mode_(mode) {}

  QueryPtr run() {
    QueryPtr q = mode_ == Precedence::kLeftToRight ? sequence() : or_expr();
    if (pos_ < toks_.size()) {
      const Token& t = toks_[pos_];
      throw ParseError(t.kind == TokenKind::kTerm ? "expected an operator between terms"
                                                  : fmt::format("unexpected '{}'", t.text),
                       t.offset);
    }
    return q;
  }

 private:
  const Token* peek() const { return pos_ < toks_.size() ? &toks_[pos_] : nullptr; }

  bool peek_op(Operator op) const {
    const Token* t = peek();
    return t && t->kind == TokenKind::kOperator && t->op == op;
  }

  QueryPtr sequence() {
    QueryPtr left = primary();
    while (const Token* t = peek()) {
      if (t->kind != TokenKind::kOperator) break;
      ++pos_;
      left = make_op(t->op, left, primary());
    }
    return left;
  }

  QueryPtr or_expr() {
    QueryPtr left = and_expr();
    while (peek_op(Operator::kOr)) {
      ++pos_;
      left = make_op(Operator::kOr, left, and_expr());
    }
    return left;
  }

  QueryPtr and_expr() {
    QueryPtr left = not_expr();
    while (peek_op(Operator::kAnd)) {
      ++pos_;
      left = make_op(Operator::kAnd, left, not_expr());
    }
    return left;
  }

  QueryPtr not_expr() {
    QueryPtr left = primary();
    while (peek_op(Operator::kNot)) {
      ++pos_;
      left = make_op(Operator::kNot, left, primary());
    }
    return left;
  }

  QueryPtr primary() {
    const Token* t = peek();
    if (!t) throw ParseError("expected a term or '(' but the query ended", end_);
    if (t->kind == TokenKind::kTerm) {
      ++pos_;
      return std::make_shared<const QueryNode>(QueryNode{t->term});
    }
    if (t->kind == TokenKind::kLParen) {
      ++pos_;
      QueryPtr inner = mode_ == Precedence::kLeftToRight ? sequence() : or_expr();
      const Token* close = peek();
      if (!close || close->kind != TokenKind::kRParen) {
        throw ParseError("expected ')'", close ? close->offset : end_);
      }
      ++pos_;
      return inner;
    }
    throw ParseError(fmt::format("expected a term or '(' but found '{}'", t->text), t->offset);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::size_t end_;
  Precedence mode_;
};

}  // namespace

QueryPtr parse(std::string_view query_text, Precedence mode) {
  ValidityReport report = check_rules(query_text);
  if (!report.valid) {
    const Violation& v = report.violations.front();
    throw ParseError(fmt::format("{}: {}", to_string(v.rule), v.detail), v.position);
  }
  auto tokens = tokenize(query_text);
  if (tokens.empty()) throw ParseError("empty query", 0);
  return Parser(std::move(tokens), query_text.size(), mode).run();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

bool needs_quotes(const Term& t) {
  if (t.phrase || t.text.empty()) return true;
  if (operator_word(t.text) || invalid_operator_word(t.text)) return true;
  for (std::size_t i = 0; i < t.text.size(); ++i) {
    if (ends_word(t.text, i) || t.text[i] == ']') return true;
  }
  return false;
}

void serialize_into(const QueryNode& node, std::string& out) {
  if (node.is_term()) {
    const Term& t = node.term();
    const char* star = t.wildcard ? "*" : "";
    if (needs_quotes(t)) {
      out += fmt::format("\"{}{}\"", t.text, star);
    } else {
      out += t.text;
      out += star;
    }
    if (t.field.tagged()) out += fmt::format("[{}]", t.field.raw);
    return;
  }
  const OpNode& op = node.op();
  out.push_back('(');
  serialize_into(*op.left, out);
  out.push_back(' ');
  out += to_string(op.op);
  out.push_back(' ');
  serialize_into(*op.right, out);
  out.push_back(')');
}

}  // namespace

std::string serialize(const QueryNode& node) {
  std::string out;
  serialize_into(node, out);
  return out;
}

QueryPtr combine_or(std::span<const QueryPtr> queries) {
  if (queries.empty()) throw Error("combine_or needs at least one query");
  QueryPtr acc = queries.front();
  for (std::size_t i = 1; i < queries.size(); ++i) acc = make_op(Operator::kOr, acc, queries[i]);
  return acc;
}

}  // namespace boolgen
