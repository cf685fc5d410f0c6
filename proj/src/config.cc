#include "boolgen/config.h"

#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "boolgen/hashing.h"

namespace boolgen {

using nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config key '{}' has the wrong type", key));
  }
}

const json& require(const json& j, const char* key, const char* section) {
  if (!j.contains(key)) throw ConfigError(fmt::format("{}: missing key '{}'", section, key));
  return j[key];
}

std::vector<ScriptedBackend::Step> parse_steps(const json& arr, const std::string& owner) {
  if (!arr.is_array()) throw ConfigError(owner + ": scripted responses must be an array");
  std::vector<ScriptedBackend::Step> steps;
  for (const auto& s : arr) {
    if (s.is_string()) {
      steps.push_back(ScriptedBackend::Step::reply(s.get<std::string>()));
    } else if (s.is_object() && s.contains("error")) {
      const auto kind = s["error"].get<std::string>();
      if (kind != "transient" && kind != "permanent") {
        throw ConfigError(owner + ": scripted error must be 'transient' or 'permanent'");
      }
      steps.push_back(ScriptedBackend::Step::fail(kind == "transient"));
    } else {
      throw ConfigError(owner + ": scripted step must be a string or {\"error\": ...}");
    }
  }
  return steps;
}

BackendSpec parse_backend(const json& j, const std::filesystem::path& base, double default_temp) {
  BackendSpec b;
  b.id = get_or<std::string>(j, "id", "");
  if (b.id.empty()) throw ConfigError("backend without an id");
  b.type = get_or<std::string>(j, "type", "http");
  b.endpoint = get_or<std::string>(j, "endpoint", "");
  b.model = get_or<std::string>(j, "model", b.id);
  b.api_key_env = get_or<std::string>(j, "api_key_env", "");
  b.sampling_params = get_or<bool>(j, "sampling_params", true);
  b.generation.backend_id = b.id;
  b.generation.temperature = default_temp;
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    b.generation.temperature = get_or<double>(g, "temperature", default_temp);
    b.generation.random_seed = get_or<std::int64_t>(g, "seed", 42);
    b.generation.output_mode = parse_output_mode(get_or<std::string>(g, "output_mode", "plain_text"));
    b.generation.max_output_tokens = get_or<int>(g, "max_output_tokens", 4096);
  }
  if (j.contains("responses")) b.responses = parse_steps(j["responses"], b.id);
  if (j.contains("keyed_responses")) {
    if (!j["keyed_responses"].is_object()) {
      throw ConfigError(b.id + ": keyed_responses must map keys to response arrays");
    }
    for (const auto& [key, steps] : j["keyed_responses"].items()) {
      b.keyed_responses.emplace_back(key, parse_steps(steps, b.id));
    }
  }
  b.cycle = get_or<bool>(j, "cycle", false);
  if (j.contains("replay_dir")) b.replay_dir = resolve(base, j["replay_dir"].get<std::string>());
  if (b.type != "http" && b.type != "scripted" && b.type != "replay") {
    throw ConfigError(fmt::format("backend {}: unknown type '{}'", b.id, b.type));
  }
  return b;
}

Precedence parse_precedence(const std::string& name) {
  if (name == "left_to_right") return Precedence::kLeftToRight;
  if (name == "not_and_or") return Precedence::kNotAndOr;
  throw ConfigError(fmt::format("unknown precedence '{}'", name));
}

std::vector<std::string> string_list(const json& j, const char* key, std::vector<std::string> fallback) {
  if (!j.contains(key)) return fallback;
  return get_or<std::vector<std::string>>(j, key, fallback);
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config " + path.string() + " is not a JSON object");
  }
  auto cfg = from_json(j, path.parent_path());
  cfg.source = path;
  return cfg;
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base) {
  RunConfig c;
  c.raw = j;
  try {
    const auto& col = require(j, "collection", "config");
    c.collection.name = get_or<std::string>(col, "name", "collection");
    c.collection.documents = resolve(base, require(col, "documents", "collection").get<std::string>());
    c.collection.documents_format =
        parse_document_format(get_or<std::string>(col, "documents_format", "jsonl"));
    c.collection.topics = resolve(base, require(col, "topics", "collection").get<std::string>());
    c.collection.topic_collection =
        parse_topic_collection(get_or<std::string>(col, "topic_collection", "seed-original"));
    c.collection.qrels = resolve(base, require(col, "qrels", "collection").get<std::string>());
    if (col.contains("mesh_hierarchy")) {
      c.collection.mesh_hierarchy = resolve(base, col["mesh_hierarchy"].get<std::string>());
    }

    c.prompts_dir = resolve(base, get_or<std::string>(j, "prompts_dir", "prompts"));

    const auto& backends = require(j, "backends", "config");
    if (!backends.is_array()) throw ConfigError("config: backends must be an array");
    for (const auto& b : backends) c.backends.push_back(parse_backend(b, base, 1.0));
    if (j.contains("extractor") && !j["extractor"].is_null()) {
      c.extractor = parse_backend(j["extractor"], base, 0.0);
    }

    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      c.pipeline.max_attempts = get_or<int>(p, "max_attempts", 20);
      c.pipeline.validity.min_count = get_or<std::uint64_t>(p, "min_count", 1);
      c.pipeline.validity.max_count = get_or<std::uint64_t>(p, "max_count", 1000000);
      c.pipeline.retrieval_target =
          parse_retrieval_target(get_or<std::string>(p, "retrieval_target", "local"));
      c.pipeline.keep_last_on_exhaustion = get_or<bool>(p, "keep_last_on_exhaustion", true);
      c.pipeline.use_search_date_cutoff = get_or<bool>(p, "use_search_date_cutoff", true);
      c.pipeline.transient_retries = get_or<int>(p, "transient_retries", 3);
      c.pipeline.precedence = parse_precedence(get_or<std::string>(p, "precedence", "left_to_right"));
    }

    if (j.contains("entrez")) {
      const auto& e = j["entrez"];
      c.entrez.base_url = get_or<std::string>(e, "base_url", c.entrez.base_url);
      const auto key_env = get_or<std::string>(e, "api_key_env", "");
      if (!key_env.empty()) {
        if (const char* key = std::getenv(key_env.c_str()); key && *key) c.entrez.api_key = key;
      }
      c.entrez.max_results = get_or<std::int64_t>(e, "max_results", c.entrez.max_results);
      c.entrez.rate_limit = get_or<double>(e, "rate_limit", c.entrez.api_key ? 10.0 : 3.0);
      c.entrez.timeout = std::chrono::milliseconds(get_or<std::int64_t>(e, "timeout_ms", 30000));
      if (e.contains("retry_backoff_ms")) {
        c.entrez.retry_backoff.clear();
        for (auto ms : get_or<std::vector<std::int64_t>>(e, "retry_backoff_ms", {})) {
          c.entrez.retry_backoff.emplace_back(ms);
        }
      }
      c.entrez.date_type = get_or<std::string>(e, "date_type", "edat");
      if (e.contains("cache_dir")) c.entrez.cache_dir = resolve(base, e["cache_dir"].get<std::string>());
    }

    c.output_dir = resolve(base, get_or<std::string>(j, "output_dir", "runs"));
    c.run_id = get_or<std::string>(j, "run_id", "default");

    if (j.contains("experiments")) {
      const auto& x = j["experiments"];
      c.experiments.prompts = string_list(x, "prompts", {});
      c.experiments.backends = string_list(x, "backends", {});
      c.experiments.strategies = string_list(x, "strategies", {"combined"});
      c.experiments.refinement_roles = string_list(x, "refinement_roles", {"manual"});
      c.experiments.selection_metric =
          parse_selection_metric(get_or<std::string>(x, "selection_metric", "recall"));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void RunConfig::validate() const {
  auto must_exist = [](const std::filesystem::path& p, const char* what) {
    std::error_code ec;
    if (!std::filesystem::exists(p, ec)) {
      throw ConfigError(fmt::format("{} not found: {}", what, p.string()));
    }
  };
  must_exist(collection.documents, "documents");
  must_exist(collection.topics, "topics");
  must_exist(collection.qrels, "qrels");
  if (collection.mesh_hierarchy) must_exist(*collection.mesh_hierarchy, "mesh hierarchy");
  must_exist(prompts_dir, "prompt directory");

  if (backends.empty()) throw ConfigError("no backends configured");
  std::set<std::string> ids;
  auto check_backend = [&](const BackendSpec& b) {
    b.generation.validate();
    if (b.type == "http" || (b.type == "replay" && !b.endpoint.empty())) {
      if (b.type == "http" && b.endpoint.empty()) {
        throw ConfigError(fmt::format("backend {}: http backends need an endpoint", b.id));
      }
      if (!b.api_key_env.empty()) {
        const char* key = std::getenv(b.api_key_env.c_str());
        if (!key || !*key) {
          throw ConfigError(fmt::format("backend {}: credential variable {} is not set", b.id,
                                        b.api_key_env));
        }
      }
    }
    if (b.type == "replay" && b.replay_dir.empty()) {
      throw ConfigError(fmt::format("backend {}: replay backends need replay_dir", b.id));
    }
    if (b.type == "scripted" && b.responses.empty() && b.keyed_responses.empty()) {
      throw ConfigError(fmt::format("backend {}: scripted backend has no responses", b.id));
    }
  };
  for (const auto& b : backends) {
    if (!ids.insert(b.id).second) throw ConfigError("duplicate backend id " + b.id);
    check_backend(b);
  }
  if (extractor) check_backend(*extractor);
  for (const auto& id : experiments.backends) backend(id);
  for (const auto& p : experiments.prompts) parse_prompt_id(p);
  for (const auto& s : experiments.strategies) parse_seed_mode(s);
  pipeline.validate();
  entrez.validate();
  if (run_id.empty() || run_id.find('/') != std::string::npos) {
    throw ConfigError("run_id must be a non-empty name without '/'");
  }
}

const BackendSpec& RunConfig::backend(const std::string& id) const {
  for (const auto& b : backends) {
    if (b.id == id) return b;
  }
  throw ConfigError("unknown backend " + id);
}

std::shared_ptr<GenerationBackend> make_backend(const BackendSpec& spec) {
  auto http = [&] {
    HttpBackendConfig h;
    h.id = spec.id;
    h.endpoint = spec.endpoint;
    h.model = spec.model;
    h.api_key_env = spec.api_key_env;
    h.sampling_params = spec.sampling_params;
    return std::make_shared<HttpChatBackend>(h);
  };
  if (spec.type == "scripted") {
    auto b = std::make_shared<ScriptedBackend>(spec.id, spec.responses, spec.cycle);
    for (const auto& [key, steps] : spec.keyed_responses) b->add_keyed(key, steps);
    return b;
  }
  if (spec.type == "replay") {
    std::shared_ptr<GenerationBackend> inner;
    if (!spec.endpoint.empty()) inner = http();
    return std::make_shared<ReplayBackend>(spec.id, spec.replay_dir, inner);
  }
  if (spec.type == "http") return http();
  throw ConfigError("unknown backend type " + spec.type);
}

}  // namespace boolgen
