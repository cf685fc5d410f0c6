#include "boolgen/entrez.h"

#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "boolgen/hashing.h"
#include "json.hpp"

namespace boolgen {

using nlohmann::json;

void EntrezConfig::validate() const {
  if (!(rate_limit > 0)) throw ConfigError("entrez rate_limit must be > 0");
  if (max_results < 1) throw ConfigError("entrez max_results must be >= 1");
  if (date_type != "edat" && date_type != "pdat") {
    throw ConfigError("entrez date_type must be edat or pdat");
  }
}

void ValidityPolicy::validate() const {
  if (min_count < 1) throw ConfigError("validity min_count must be >= 1");
  if (max_count < min_count) throw ConfigError("validity max_count must be >= min_count");
}

bool validate_count(std::uint64_t count, const ValidityPolicy& policy) {
  return count >= policy.min_count && count <= policy.max_count;
}

bool validate_count(const RetrievalResult& result, const ValidityPolicy& policy) {
  return validate_count(static_cast<std::uint64_t>(result.count), policy);
}

Clock::time_point SteadyClock::now() { return std::chrono::steady_clock::now(); }

void SteadyClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

RateGate::RateGate(double per_second, Clock& clock)
    : interval_(std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / per_second))),
      clock_(clock) {
  if (!(per_second > 0)) throw ConfigError("rate limit must be > 0");
}

void RateGate::acquire() {
  Clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = clock_.now();
    slot = next_ && *next_ > now ? *next_ : now;
    next_ = slot + interval_;
  }
  if (slot > clock_.now()) clock_.sleep_until(slot);
}

HttpResponse HttpTransport::get(const std::string& url, std::chrono::milliseconds timeout) {
  // Split scheme://host[:port] from the path+query.
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw TransportError("malformed url " + url);
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = url.substr(0, path_start);
  std::string target = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  client.set_follow_location(true);
  auto res = client.Get(target);
  if (!res) throw TransportError(fmt::format("GET {} failed: {}", url, httplib::to_string(res.error())));
  return {res->status, res->body};
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / (sha256_hex(key) + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  auto p = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  auto entry = json::parse(read_file(p), nullptr, /*allow_exceptions=*/false);
  if (entry.is_discarded() || !entry.contains("body") || entry.value("key", "") != key) {
    return std::nullopt;
  }
  return entry["body"].get<std::string>();
}

void ResponseCache::put(const std::string& key, const std::string& body) const {
  json entry{{"key", key}, {"body", body}};
  write_file_atomic(path_for(key), entry.dump(2) + "\n");
}

std::string build_esearch_url(const std::string& query_text, const std::optional<Date>& search_date,
                              const EntrezConfig& config) {
  std::string url = fmt::format("{}/esearch.fcgi?db=pubmed&term={}&retmax={}&retmode=json",
                                config.base_url, httplib::detail::encode_query_param(query_text),
                                config.max_results);
  if (search_date) {
    url += fmt::format("&datetype={}&mindate=1900/01/01&maxdate={}", config.date_type,
                       search_date->slashed());
  }
  if (config.api_key) url += "&api_key=" + httplib::detail::encode_query_param(*config.api_key);
  return url;
}

RetrievalResult parse_esearch_response(const std::string& body) {
  auto doc = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) throw ApiError("esearch returned non-JSON payload");
  if (doc.contains("error")) {
    throw ApiError("esearch error: " + doc["error"].dump());
  }
  if (!doc.contains("esearchresult") || !doc["esearchresult"].is_object()) {
    throw ApiError("esearch payload lacks esearchresult");
  }
  const auto& r = doc["esearchresult"];
  if (r.contains("ERROR")) {
    throw QuerySyntaxRejected("esearch rejected query: " + r["ERROR"].get<std::string>());
  }
  if (!r.contains("count")) throw ApiError("esearchresult lacks count");
  RetrievalResult out;
  const auto& count = r["count"];
  if (count.is_string()) {
    out.count = std::stoull(count.get<std::string>());
  } else {
    out.count = count.get<std::size_t>();
  }
  if (r.contains("idlist")) {
    for (const auto& id : r["idlist"]) out.pmids.insert(id.get<std::string>());
  }
  out.truncated = out.count > out.pmids.size();
  return out;
}

EntrezClient::EntrezClient(EntrezConfig config, std::shared_ptr<Transport> transport,
                           std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(std::move(clock)),
      gate_(config_.rate_limit, *clock_) {
  config_.validate();
  if (config_.cache_dir) cache_.emplace(*config_.cache_dir);
}

std::uint64_t EntrezClient::network_requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::string EntrezClient::fetch(const std::string& url) {
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= config_.retry_backoff.size(); ++attempt) {
    if (attempt > 0) clock_->sleep_until(clock_->now() + config_.retry_backoff[attempt - 1]);
    gate_.acquire();
    {
      std::lock_guard lock(mu_);
      ++requests_;
    }
    HttpResponse res;
    try {
      res = transport_->get(url, config_.timeout);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    if (res.status == 200) return res.body;
    if (res.status == 429 || res.status >= 500) {
      last_error = fmt::format("HTTP {}", res.status);
      continue;
    }
    throw ApiError(fmt::format("esearch HTTP {}: {}", res.status, res.body.substr(0, 200)));
  }
  throw NetworkError("esearch failed after retries: " + last_error);
}

RetrievalResult EntrezClient::esearch(const std::string& query_text,
                                      const std::optional<Date>& search_date) {
  if (query_text.empty()) throw QuerySyntaxRejected("empty query");
  const std::string url = build_esearch_url(query_text, search_date, config_);
  // The api key does not change results, so it stays out of the cache key.
  const std::string key = fmt::format("{}\n{}\n{}\n{}", sha256_hex(query_text),
                                      search_date ? search_date->iso() : "-", config_.max_results,
                                      config_.date_type);
  if (cache_) {
    if (auto body = cache_->get(key)) return parse_esearch_response(*body);
  }
  const std::string body = fetch(url);
  try {
    RetrievalResult result = parse_esearch_response(body);
    if (cache_) cache_->put(key, body);
    return result;
  } catch (const QuerySyntaxRejected&) {
    // A rejection is a stable answer for this query; API errors are not.
    if (cache_) cache_->put(key, body);
    throw;
  }
}

}  // namespace boolgen
