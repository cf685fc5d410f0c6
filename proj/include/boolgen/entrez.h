#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "boolgen/date.h"
#include "boolgen/error.h"
#include "boolgen/matcher.h"

namespace boolgen {

class NetworkError : public Error {
 public:
  using Error::Error;
};

class ApiError : public Error {
 public:
  using Error::Error;
};

// The API rejected the query text itself; callers treat this as an invalid
// query rather than a transient failure.
class QuerySyntaxRejected : public Error {
 public:
  using Error::Error;
};

struct EntrezConfig {
  std::string base_url = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
  std::optional<std::string> api_key;
  std::int64_t max_results = 100000;  // retmax
  double rate_limit = 3.0;            // requests per second
  std::chrono::milliseconds timeout{30000};
  std::vector<std::chrono::milliseconds> retry_backoff{std::chrono::milliseconds(1000),
                                                       std::chrono::milliseconds(2000),
                                                       std::chrono::milliseconds(4000)};
  std::string date_type = "edat";  // or "pdat"
  std::optional<std::filesystem::path> cache_dir;

  void validate() const;  // throws ConfigError
};

struct ValidityPolicy {
  std::uint64_t min_count = 1;
  std::uint64_t max_count = 1000000;

  void validate() const;  // throws ConfigError
};

bool validate_count(std::uint64_t count, const ValidityPolicy& policy);
bool validate_count(const RetrievalResult& result, const ValidityPolicy& policy);

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point t) = 0;
};

class SteadyClock : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point t) override;
};

// Spaces request starts at least 1/rate seconds apart. Thread-safe.
class RateGate {
 public:
  RateGate(double per_second, Clock& clock);
  void acquire();

 private:
  std::chrono::nanoseconds interval_;
  Clock& clock_;
  std::mutex mu_;
  std::optional<Clock::time_point> next_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // `target` is the full URL. Throws TransportError on connection failure.
  virtual HttpResponse get(const std::string& url, std::chrono::milliseconds timeout) = 0;
};

class HttpTransport : public Transport {
 public:
  HttpResponse get(const std::string& url, std::chrono::milliseconds timeout) override;
};

// One JSON document per request key under a directory.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& body) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path dir_;
};

std::string build_esearch_url(const std::string& query_text, const std::optional<Date>& search_date,
                              const EntrezConfig& config);

// Parses an esearch JSON payload. Throws QuerySyntaxRejected or ApiError.
RetrievalResult parse_esearch_response(const std::string& body);

class EntrezClient {
 public:
  EntrezClient(EntrezConfig config, std::shared_ptr<Transport> transport,
               std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>());

  RetrievalResult esearch(const std::string& query_text,
                          const std::optional<Date>& search_date = std::nullopt);

  const EntrezConfig& config() const { return config_; }
  std::uint64_t network_requests() const;

 private:
  std::string fetch(const std::string& url);

  EntrezConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  RateGate gate_;
  std::optional<ResponseCache> cache_;
  mutable std::mutex mu_;
  std::uint64_t requests_ = 0;
};

}  // namespace boolgen
