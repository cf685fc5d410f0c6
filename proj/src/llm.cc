#include "boolgen/llm.h"

#include <cstdlib>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>

#include "boolgen/hashing.h"
#include "boolgen/text.h"
#include "json.hpp"

namespace boolgen {

using nlohmann::json;

std::string_view to_string(OutputMode mode) {
  switch (mode) {
    case OutputMode::kPlainText: return "plain_text";
    case OutputMode::kJson: return "json";
    case OutputMode::kSystemJson: return "system_json";
  }
  return "plain_text";
}

OutputMode parse_output_mode(std::string_view name) {
  if (name == "plain_text") return OutputMode::kPlainText;
  if (name == "json") return OutputMode::kJson;
  if (name == "system_json") return OutputMode::kSystemJson;
  throw ConfigError(fmt::format("unknown output mode '{}'", name));
}

void GenerationConfig::validate() const {
  if (temperature < 0) throw ConfigError("temperature must be >= 0");
  if (max_output_tokens <= 0) throw ConfigError("max_output_tokens must be positive");
}

std::string_view to_string(PromptId id) {
  switch (id) {
    case PromptId::kP1: return "p1";
    case PromptId::kP2: return "p2";
    case PromptId::kP3: return "p3";
    case PromptId::kP4: return "p4";
    case PromptId::kP5: return "p5";
    case PromptId::kP6: return "p6";
    case PromptId::kP7: return "p7";
    case PromptId::kGuided: return "guided";
  }
  return "p1";
}

PromptId parse_prompt_id(std::string_view name) {
  for (PromptId id : {PromptId::kP1, PromptId::kP2, PromptId::kP3, PromptId::kP4, PromptId::kP5,
                      PromptId::kP6, PromptId::kP7, PromptId::kGuided}) {
    if (to_string(id) == name) return id;
  }
  throw ConfigError(fmt::format("unknown prompt id '{}'", name));
}

PromptKind kind_of(PromptId id) {
  switch (id) {
    case PromptId::kP1:
    case PromptId::kP2:
    case PromptId::kP3: return PromptKind::kFormulationZeroShot;
    case PromptId::kP4:
    case PromptId::kP5: return PromptKind::kFormulationOneShot;
    case PromptId::kP6: return PromptKind::kRefinementZeroShot;
    case PromptId::kP7: return PromptKind::kRefinementOneShot;
    case PromptId::kGuided: return PromptKind::kGuided;
  }
  return PromptKind::kFormulationZeroShot;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

const std::regex& placeholder_pattern() {
  static const std::regex kPattern(R"(\{([a-z_]+)\})");
  return kPattern;
}

bool mentions(const std::string& body, std::string_view name) {
  return body.find(fmt::format("{{{}}}", name)) != std::string::npos;
}

std::string substitute(const std::string& text, const Bindings& bindings) {
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), placeholder_pattern());
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(text, last, static_cast<std::size_t>(m.position()) - last);
    auto found = bindings.find(m[1].str());
    if (found == bindings.end()) throw MissingPlaceholder(m[1].str());
    out += found->second;
    last = static_cast<std::size_t>(m.position() + m.length());
  }
  out.append(text, last, std::string::npos);
  return out;
}

}  // namespace

PromptTemplate::PromptTemplate(PromptId id, std::string body)
    : id_(id), kind_(kind_of(id)), body_(std::move(body)) {
  auto at = body_.find(kInputMarker);
  if (at == std::string::npos) {
    input_ = trim(body_);
  } else {
    instruction_ = trim(body_.substr(0, at));
    input_ = trim(body_.substr(at + kInputMarker.size()));
  }
  auto require = [&](std::string_view name) {
    if (!mentions(body_, name)) {
      throw ConfigError(fmt::format("prompt {} must contain {{{}}}", to_string(id_), name));
    }
  };
  if (kind_ == PromptKind::kFormulationOneShot || kind_ == PromptKind::kRefinementOneShot) {
    require("example_query");
  }
  if (kind_ == PromptKind::kRefinementZeroShot || kind_ == PromptKind::kRefinementOneShot) {
    require("query_to_refine");
  }
  if (kind_ == PromptKind::kGuided) require("seed_studies");
}

PromptRegistry PromptRegistry::load(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw ConfigError("prompt directory not found: " + dir.string());
  }
  PromptRegistry reg;
  for (PromptId id : {PromptId::kP1, PromptId::kP2, PromptId::kP3, PromptId::kP4, PromptId::kP5,
                      PromptId::kP6, PromptId::kP7, PromptId::kGuided}) {
    auto name = fmt::format("{}.txt", to_string(id));
    auto path = dir / name;
    if (!std::filesystem::exists(path, ec)) continue;
    auto body = read_file(path);
    reg.add(PromptTemplate(id, body), sha256_hex(body));
    reg.hashes_[name] = sha256_hex(body);
  }
  auto example_path = dir / "example.json";
  if (std::filesystem::exists(example_path, ec)) {
    auto raw = read_file(example_path);
    auto j = json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ConfigError("malformed one-shot example " + example_path.string());
    }
    reg.example_ = OneShotExample{j.value("topic_id", ""), j.value("title", ""),
                                  j.value("query", "")};
    reg.hashes_["example.json"] = sha256_hex(raw);
  }
  return reg;
}

void PromptRegistry::add(PromptTemplate tmpl, std::string asset_hash) {
  if (!asset_hash.empty()) hashes_[fmt::format("{}.txt", to_string(tmpl.id()))] = asset_hash;
  templates_.insert_or_assign(tmpl.id(), std::move(tmpl));
}

const PromptTemplate& PromptRegistry::get(PromptId id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) {
    throw ConfigError(fmt::format("prompt {} is not loaded", to_string(id)));
  }
  return it->second;
}

const std::string_view kJsonAnswerInstruction =
    "Return your answer as a single JSON object with exactly one key, \"query\", whose value is "
    "the Boolean query as a string. Do not include any other text.";

const std::string_view kDefaultSystemPreamble =
    "You are an information specialist who develops Boolean queries for systematic reviews "
    "searched on PubMed.";

ChatRequest render_prompt(const PromptTemplate& tmpl, const Topic& topic, const Bindings& bindings,
                          const GenerationConfig& config) {
  Bindings all = bindings;
  all.try_emplace("topic_title", topic.title);

  ChatRequest req;
  req.config = config;
  const std::string input = substitute(tmpl.input(), all);
  const std::string instruction = substitute(tmpl.instruction(), all);
  const std::string full = instruction.empty() ? input : instruction + "\n\n" + input;
  switch (config.output_mode) {
    case OutputMode::kPlainText:
      req.user_message = full;
      break;
    case OutputMode::kJson:
      req.user_message = fmt::format("{}\n\n{}", full, kJsonAnswerInstruction);
      break;
    case OutputMode::kSystemJson:
      req.system_message = fmt::format(
          "{}\n\n{}", instruction.empty() ? std::string(kDefaultSystemPreamble) : instruction,
          kJsonAnswerInstruction);
      req.user_message = input;
      break;
  }
  return req;
}

// ---------------------------------------------------------------------------
// Backends

std::string generate(const ChatRequest& request, GenerationBackend& backend,
                     std::optional<TokenUsage>* usage) {
  Completion c = backend.complete(request);
  if (usage) *usage = c.usage;
  return std::move(c.text);
}

ScriptedBackend::ScriptedBackend(std::string id, std::vector<Step> script, bool cycle)
    : id_(std::move(id)), cycle_(cycle) {
  default_.steps = std::move(script);
}

void ScriptedBackend::add_keyed(std::string key, std::vector<Step> script) {
  std::lock_guard lock(mu_);
  keyed_.emplace_back(std::move(key), Script{std::move(script), 0});
}

const std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

Completion ScriptedBackend::complete(const ChatRequest& request) {
  Step step;
  {
    std::lock_guard lock(mu_);
    ++calls_;
    requests_.push_back(request);
    Script* script = &default_;
    for (auto& [key, s] : keyed_) {
      if (request.user_message.find(key) != std::string::npos) {
        script = &s;
        break;
      }
    }
    if (script->steps.empty()) throw BackendError(id_ + ": empty script", false);
    const std::size_t n = script->steps.size();
    const std::size_t at = cycle_ ? script->cursor % n : std::min(script->cursor, n - 1);
    step = script->steps[at];
    ++script->cursor;
  }
  if (step.error_transient) throw BackendError(id_ + ": " + step.text, *step.error_transient);
  return {step.text, std::nullopt};
}

std::string request_key(const ChatRequest& request) {
  json j{{"system", request.system_message ? json(*request.system_message) : json(nullptr)},
         {"user", request.user_message},
         {"backend", request.config.backend_id},
         {"temperature", request.config.temperature},
         {"seed", request.config.random_seed},
         {"mode", to_string(request.config.output_mode)},
         {"max_tokens", request.config.max_output_tokens}};
  return sha256_hex(j.dump());
}

ReplayBackend::ReplayBackend(std::string id, std::filesystem::path dir,
                             std::shared_ptr<GenerationBackend> inner)
    : id_(std::move(id)), dir_(std::move(dir)), inner_(std::move(inner)) {}

bool ReplayBackend::honors_sampling_params() const {
  return inner_ ? inner_->honors_sampling_params() : true;
}

Completion ReplayBackend::complete(const ChatRequest& request) {
  const std::string key = request_key(request);
  const auto path = dir_ / (key + ".json");
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    auto j = json::parse(read_file(path), nullptr, false);
    if (!j.is_discarded() && j.contains("completion")) {
      ++hits_;
      Completion c{j["completion"].get<std::string>(), std::nullopt};
      if (j.contains("usage") && j["usage"].is_object()) {
        c.usage = TokenUsage{j["usage"].value("prompt_tokens", 0LL),
                             j["usage"].value("completion_tokens", 0LL)};
      }
      return c;
    }
  }
  ++misses_;
  if (!inner_) throw BackendError(id_ + ": no recorded completion for request " + key, false);
  Completion c = inner_->complete(request);
  json entry{{"request",
              {{"system", request.system_message ? json(*request.system_message) : json(nullptr)},
               {"user", request.user_message},
               {"backend", request.config.backend_id}}},
             {"completion", c.text}};
  if (c.usage) {
    entry["usage"] = {{"prompt_tokens", c.usage->prompt_tokens},
                      {"completion_tokens", c.usage->completion_tokens}};
  }
  // Append-only: a concurrent writer of the same key wrote the same request.
  if (!std::filesystem::exists(path, ec)) write_file_atomic(path, entry.dump(2) + "\n");
  return c;
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {}

std::string HttpChatBackend::request_body(const ChatRequest& request) const {
  json messages = json::array();
  if (request.system_message) {
    messages.push_back({{"role", "system"}, {"content", *request.system_message}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_message}});
  json body{{"model", config_.model.empty() ? request.config.backend_id : config_.model},
            {"messages", messages},
            {"max_tokens", request.config.max_output_tokens}};
  if (config_.sampling_params) {
    body["temperature"] = request.config.temperature;
    body["seed"] = request.config.random_seed;
  }
  if (request.config.output_mode != OutputMode::kPlainText) {
    body["response_format"] = {{"type", "json_object"}};
  }
  return body.dump();
}

Completion HttpChatBackend::parse_response(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty()) {
    throw BackendError("chat completion payload has no choices", false);
  }
  const auto& msg = j["choices"][0]["message"];
  Completion c;
  c.text = msg.contains("content") && msg["content"].is_string()
               ? msg["content"].get<std::string>()
               : std::string();
  if (j.contains("usage") && j["usage"].is_object()) {
    c.usage = TokenUsage{j["usage"].value("prompt_tokens", 0LL),
                         j["usage"].value("completion_tokens", 0LL)};
  }
  return c;
}

Completion HttpChatBackend::complete(const ChatRequest& request) {
  auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw BackendError(config_.id + ": malformed endpoint " + config_.endpoint, false);
  }
  auto path_start = config_.endpoint.find('/', scheme_end + 3);
  const std::string origin = config_.endpoint.substr(0, path_start);
  std::string base = path_start == std::string::npos ? "" : config_.endpoint.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) {
      throw BackendError(config_.id + ": environment variable " + config_.api_key_env + " unset",
                         false);
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  auto res = client.Post(base + "/chat/completions", headers, request_body(request),
                         "application/json");
  if (!res) {
    throw BackendError(config_.id + ": " + httplib::to_string(res.error()), /*transient=*/true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendError(fmt::format("{}: HTTP {}", config_.id, res->status), true);
  }
  if (res->status != 200) {
    throw BackendError(
        fmt::format("{}: HTTP {}: {}", config_.id, res->status, res->body.substr(0, 300)), false);
  }
  return parse_response(res->body);
}

// ---------------------------------------------------------------------------
// Extraction

const std::string_view kExtractionInstruction =
    "The text below was written by a language model that was asked for a Boolean query for a "
    "PubMed systematic review search. Copy the Boolean query out of the text exactly as written, "
    "without adding, removing, or changing any part of it. Reply with the query only: no "
    "explanation, no surrounding quotation marks, no code formatting. If the text contains no "
    "Boolean query, reply with exactly NO_QUERY.";

namespace {

const std::regex& operator_pattern() {
  static const std::regex kPattern(R"((^|[^A-Za-z0-9_])(AND|OR|NOT)([^A-Za-z0-9_]|$))");
  return kPattern;
}

bool has_operator(std::string_view s) {
  return std::regex_search(s.begin(), s.end(), operator_pattern());
}

bool ends_with_operator(const std::string& s) {
  static const std::regex kTail(R"((^|[^A-Za-z0-9_])(AND|OR|NOT)$)");
  return std::regex_search(s, kTail);
}

bool starts_with_operator(const std::string& s) {
  static const std::regex kHead(R"(^(AND|OR|NOT)([^A-Za-z0-9_]|$))");
  return std::regex_search(s, kHead);
}

std::string strip_code_fence(const std::string& text) {
  auto open = text.find("```");
  if (open == std::string::npos) return trim(text);
  auto body_start = text.find('\n', open);
  if (body_start == std::string::npos) return trim(text);
  auto close = text.find("```", body_start);
  if (close == std::string::npos) return trim(text.substr(body_start + 1));
  return trim(text.substr(body_start + 1, close - body_start - 1));
}

}  // namespace

std::optional<std::string> extract_json_query(const std::string& raw) {
  auto read = [](const std::string& text) -> std::optional<std::string> {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("query") || !j["query"].is_string()) {
      return std::nullopt;
    }
    auto q = trim(j["query"].get<std::string>());
    if (q.empty()) return std::nullopt;
    return q;
  };
  if (auto q = read(trim(raw))) return q;
  auto open = raw.find('{');
  auto close = raw.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    return read(raw.substr(open, close - open + 1));
  }
  return std::nullopt;
}

std::optional<std::string> heuristic_extract(const std::string& raw) {
  // Top-level balanced parenthesized spans.
  std::size_t best_start = 0, best_len = 0;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '(') {
      if (depth == 0) start = i;
      ++depth;
    } else if (raw[i] == ')' && depth > 0) {
      if (--depth == 0) {
        std::size_t len = i - start + 1;
        if (len > best_len && has_operator(std::string_view(raw).substr(start, len))) {
          best_start = start;
          best_len = len;
        }
      }
    }
  }
  if (best_len > 0) {
    std::size_t line_start = raw.rfind('\n', best_start);
    line_start = line_start == std::string::npos ? 0 : line_start + 1;
    std::size_t line_end = raw.find('\n', best_start + best_len);
    if (line_end == std::string::npos) line_end = raw.size();
    const std::string before = trim(raw.substr(line_start, best_start - line_start));
    const std::string after =
        trim(raw.substr(best_start + best_len, line_end - best_start - best_len));
    if ((!before.empty() && ends_with_operator(before)) ||
        (!after.empty() && starts_with_operator(after))) {
      return trim(raw.substr(line_start, line_end - line_start));
    }
    return raw.substr(best_start, best_len);
  }

  std::string best_line;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t end = raw.find('\n', pos);
    if (end == std::string::npos) end = raw.size();
    std::string line = trim(raw.substr(pos, end - pos));
    if (line.size() > best_line.size() && has_operator(line)) best_line = std::move(line);
    pos = end + 1;
  }
  if (!best_line.empty()) return best_line;
  // A single-term query has no operator; accept the longest line with a
  // field-tagged term instead.
  static const std::regex kTagged(R"([A-Za-z0-9*"]\s*\[[A-Za-z /:]+\])");
  pos = 0;
  while (pos <= raw.size()) {
    std::size_t end = raw.find('\n', pos);
    if (end == std::string::npos) end = raw.size();
    std::string line = trim(raw.substr(pos, end - pos));
    if (line.size() > best_line.size() && std::regex_search(line, kTagged)) {
      best_line = std::move(line);
    }
    pos = end + 1;
  }
  if (best_line.empty()) return std::nullopt;
  return best_line;
}

Extraction extract_query(const std::string& raw, GenerationBackend* extractor, OutputMode mode) {
  if (mode != OutputMode::kPlainText) {
    if (auto q = extract_json_query(raw)) return {*q, ExtractionPath::kStructural};
  }
  if (extractor) {
    ChatRequest req;
    req.user_message = fmt::format("{}\n\n{}", kExtractionInstruction, raw);
    req.config.backend_id = extractor->id();
    req.config.temperature = 0.0;
    req.config.random_seed = 42;
    req.config.output_mode = OutputMode::kPlainText;
    std::string reply = strip_code_fence(generate(req, *extractor));
    if (reply.empty() || reply == "NO_QUERY") throw NoQueryFound();
    return {reply, ExtractionPath::kExtractorBackend};
  }
  if (auto q = heuristic_extract(raw)) return {*q, ExtractionPath::kHeuristic};
  throw NoQueryFound();
}

}  // namespace boolgen
