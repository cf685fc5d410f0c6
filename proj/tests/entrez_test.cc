#include <deque>

#include <gtest/gtest.h>

#include "boolgen/entrez.h"
#include "support/fixtures.h"

namespace boolgen {
namespace {

using namespace std::chrono_literals;

class FakeClock : public Clock {
 public:
  time_point now() override { return now_; }
  void sleep_until(time_point t) override {
    if (t > now_) {
      slept_ += t - now_;
      now_ = t;
    }
  }
  std::chrono::nanoseconds slept() const { return slept_; }

 private:
  time_point now_{};
  std::chrono::nanoseconds slept_{0};
};

class FakeTransport : public Transport {
 public:
  // Each entry is a response, or nullopt for a connection failure.
  std::deque<std::optional<HttpResponse>> script;
  std::vector<std::string> urls;

  HttpResponse get(const std::string& url, std::chrono::milliseconds) override {
    urls.push_back(url);
    if (script.empty()) return ok(1, {"1"});
    auto next = script.front();
    if (script.size() > 1) script.pop_front();
    if (!next) throw TransportError("connection refused");
    return *next;
  }

  static HttpResponse ok(std::size_t count, std::vector<std::string> ids) {
    std::string list;
    for (std::size_t i = 0; i < ids.size(); ++i) list += (i ? ",\"" : "\"") + ids[i] + "\"";
    return {200, R"({"esearchresult": {"count": ")" + std::to_string(count) +
                     R"(", "idlist": [)" + list + "]}}"};
  }
};

TEST(ValidityTest, BoundariesAreInclusive) {
  ValidityPolicy policy;
  EXPECT_FALSE(validate_count(0, policy));
  EXPECT_TRUE(validate_count(1, policy));
  EXPECT_TRUE(validate_count(1000000, policy));
  EXPECT_FALSE(validate_count(1000001, policy));
  RetrievalResult r;
  r.count = 5;
  EXPECT_TRUE(validate_count(r, policy));
}

TEST(ValidityTest, PolicyValidation) {
  EXPECT_THROW((ValidityPolicy{0, 10}.validate()), ConfigError);
  EXPECT_THROW((ValidityPolicy{5, 4}.validate()), ConfigError);
  EXPECT_NO_THROW((ValidityPolicy{}.validate()));
}

TEST(EsearchUrlTest, EncodesQueryAndDates) {
  EntrezConfig config;
  config.max_results = 500;
  auto url = build_esearch_url("rabies[tiab] AND \"x y\"", Date(2016, 5, 31), config);
  EXPECT_EQ(url,
            "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esearch.fcgi?db=pubmed&term="
            "rabies%5Btiab%5D%20AND%20%22x%20y%22&retmax=500&retmode=json"
            "&datetype=edat&mindate=1900/01/01&maxdate=2016/05/31");
  config.api_key = "k";
  EXPECT_NE(build_esearch_url("a", std::nullopt, config).find("&api_key=k"), std::string::npos);
  EXPECT_EQ(build_esearch_url("a", std::nullopt, config).find("maxdate"), std::string::npos);
}

TEST(EsearchParseTest, ReadsCountAndIds) {
  auto r = parse_esearch_response(FakeTransport::ok(3, {"1", "2"}).body);
  EXPECT_EQ(r.count, 3u);
  EXPECT_EQ(r.pmids, (std::set<std::string>{"1", "2"}));
  EXPECT_TRUE(r.truncated);
  auto full = parse_esearch_response(FakeTransport::ok(2, {"1", "2"}).body);
  EXPECT_FALSE(full.truncated);
}

TEST(EsearchParseTest, ClassifiesErrors) {
  EXPECT_THROW(parse_esearch_response("<html>"), ApiError);
  EXPECT_THROW(parse_esearch_response(R"({"error": "API rate limit exceeded"})"), ApiError);
  EXPECT_THROW(parse_esearch_response(R"({"esearchresult": {"ERROR": "Invalid query"}})"),
               QuerySyntaxRejected);
  EXPECT_THROW(parse_esearch_response(R"({"esearchresult": {}})"), ApiError);
}

TEST(RateGateTest, SpacesRequests) {
  FakeClock clock;
  RateGate gate(4.0, clock);
  for (int i = 0; i < 5; ++i) gate.acquire();
  EXPECT_EQ(clock.slept(), 1000ms);
  EXPECT_THROW(RateGate(0.0, clock), ConfigError);
}

struct ClientFixture {
  std::shared_ptr<FakeTransport> transport = std::make_shared<FakeTransport>();
  std::shared_ptr<FakeClock> clock = std::make_shared<FakeClock>();

  EntrezClient client(EntrezConfig config = {}) { return EntrezClient(config, transport, clock); }
};

TEST(EntrezClientTest, RetriesTransientFailuresWithBackoff) {
  ClientFixture f;
  f.transport->script = {std::nullopt, HttpResponse{503, ""}, FakeTransport::ok(1, {"9"})};
  auto client = f.client();
  auto r = client.esearch("rabies");
  EXPECT_EQ(r.pmids, std::set<std::string>{"9"});
  EXPECT_EQ(client.network_requests(), 3u);
  EXPECT_GE(f.clock->slept(), 3000ms);
}

TEST(EntrezClientTest, GivesUpAfterBackoffSchedule) {
  ClientFixture f;
  f.transport->script = {HttpResponse{429, ""}};
  auto client = f.client();
  EXPECT_THROW(client.esearch("rabies"), NetworkError);
  EXPECT_EQ(client.network_requests(), 4u);
}

TEST(EntrezClientTest, ClientErrorsAreNotRetried) {
  ClientFixture f;
  f.transport->script = {HttpResponse{400, "bad"}};
  auto client = f.client();
  EXPECT_THROW(client.esearch("rabies"), ApiError);
  EXPECT_EQ(client.network_requests(), 1u);
  EXPECT_THROW(client.esearch(""), QuerySyntaxRejected);
}

TEST(EntrezClientTest, CacheServesRepeatsWithoutNetwork) {
  testing::TempDir dir;
  ClientFixture f;
  EntrezConfig config;
  config.cache_dir = dir.path();
  f.transport->script = {FakeTransport::ok(2, {"1", "2"})};
  {
    auto client = f.client(config);
    client.esearch("rabies", Date(2016, 1, 1));
    client.esearch("rabies", Date(2016, 1, 1));
    EXPECT_EQ(client.network_requests(), 1u);
    client.esearch("rabies", Date(2017, 1, 1));
    EXPECT_EQ(client.network_requests(), 2u);
  }
  auto fresh = f.client(config);
  auto r = fresh.esearch("rabies", Date(2016, 1, 1));
  EXPECT_EQ(fresh.network_requests(), 0u);
  EXPECT_EQ(r.count, 2u);
}

TEST(EntrezClientTest, RejectionsAreCachedButApiErrorsAreNot) {
  testing::TempDir dir;
  ClientFixture f;
  EntrezConfig config;
  config.cache_dir = dir.path();
  f.transport->script = {HttpResponse{200, R"({"esearchresult": {"ERROR": "bad"}})"}};
  auto client = f.client(config);
  EXPECT_THROW(client.esearch("x"), QuerySyntaxRejected);
  EXPECT_THROW(client.esearch("x"), QuerySyntaxRejected);
  EXPECT_EQ(client.network_requests(), 1u);
  f.transport->script = {HttpResponse{200, R"({"error": "oops"})"}};
  EXPECT_THROW(client.esearch("y"), ApiError);
  EXPECT_THROW(client.esearch("y"), ApiError);
  EXPECT_EQ(client.network_requests(), 3u);
}

TEST(EntrezConfigTest, Validation) {
  EntrezConfig c;
  c.date_type = "mdat";
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_results = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace boolgen
