#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace boolgen {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes (ConfigError -> 2, everything else -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A malformed input record. `location` is a 1-based line or record number.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}
  std::size_t location() const { return location_; }

 private:
  std::size_t location_;
};

class DuplicatePmid : public Error {
 public:
  explicit DuplicatePmid(std::string pmid)
      : Error("duplicate pmid: " + pmid), pmid_(std::move(pmid)) {}
  const std::string& pmid() const { return pmid_; }

 private:
  std::string pmid_;
};

// Lexing or parsing failure; `offset` is a byte offset into the query text.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class LexError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace boolgen
