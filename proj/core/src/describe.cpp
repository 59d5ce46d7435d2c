#include "freeml/describe.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "httplib.h"

namespace freeml {

PromptConfig PromptConfig::defaults() {
  PromptConfig cfg;
  cfg.prefix =
      "The following record lists daily weather drivers and related measurements "
      "for one monitoring site in a river basin.";
  cfg.suffix =
      "Summarize the record in 2-4 fluent sentences, preserving all numeric values exactly.";
  cfg.template_version = "v1";
  cfg.source = DescriptionSource::template_engine;
  return cfg;
}

void PromptConfig::validate() const {
  if (prefix.empty() || suffix.empty()) {
    throw std::invalid_argument("prompt prefix and suffix must be nonempty");
  }
  if (source == DescriptionSource::remote_llm && !remote) {
    throw std::invalid_argument("remote source selected but no remote configuration given");
  }
}

std::string iso8601_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string cache_key_for(const PromptConfig& cfg, const LinearizedRecord& rec) {
  HashStream hs;
  hs.field(cfg.source == DescriptionSource::remote_llm && cfg.remote ? cfg.remote->model_id
                                                                     : cfg.template_version);
  hs.field(cfg.prefix).field(cfg.suffix);
  for (const auto& p : rec.pairs) {
    hs.field(p.key).field(p.value);
  }
  return to_hex64(hs.digest());
}

namespace {

bool parse_value(const std::string& s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

void warn_unitless_once(const std::string& key) {
  static std::mutex mu;
  static std::set<std::string> seen;
  std::lock_guard lock(mu);
  if (seen.insert(key).second) {
    std::cerr << "warning: no unit metadata for '" << key << "'; rendering unitless sentence\n";
  }
}

// A date pair is context for a following block of observed-* pairs; the date
// pair introducing the sample's own features gets its own sentence.
bool is_context_date(const std::vector<LinearizedPair>& pairs, std::size_t i) {
  for (std::size_t j = i + 1; j < pairs.size(); ++j) {
    if (pairs[j].key == "date") continue;
    return pairs[j].key.rfind("observed ", 0) == 0;
  }
  return false;
}

std::string feature_sentence(const LinearizedPair& p) {
  double v = 0.0;
  bool numeric = parse_value(p.value, v);

  if (p.key == "rainfall" && numeric && v == 0.0) {
    return "There was no recorded rainfall.";
  }
  if (p.key == "air temperature") {
    std::string s = "The average air temperature was " + p.value;
    if (!p.unit.empty()) s += " " + p.unit;
    if (numeric && v < 0.0) s += ", where freezing-thawing and phase change may occur";
    return s + ".";
  }
  if (p.key == "solar radiation") {
    std::string s = "The solar radiation measured was " + p.value;
    if (!p.unit.empty()) s += " " + p.unit;
    return s + ".";
  }
  if (p.key == "cloud cover") {
    return "The average cloud cover fraction was " + p.value + ".";
  }
  if (p.unit.empty()) {
    warn_unitless_once(p.key);
    return "The " + p.key + " measured was " + p.value + ".";
  }
  return "The " + p.key + " measured was " + p.value + " " + p.unit + ".";
}

}  // namespace

Description render_template(const PromptConfig& cfg, const LinearizedRecord& rec) {
  std::string text;
  auto append = [&text](const std::string& sentence) {
    if (!text.empty()) text += " ";
    text += sentence;
  };

  std::optional<Date> context_date;
  const auto& pairs = rec.pairs;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.key == "date") {
      Date d = Date::parse(p.value);
      if (is_context_date(pairs, i)) {
        context_date = d;
      } else {
        append("The following measurements were recorded on " + d.human() + ".");
      }
      continue;
    }
    if (p.key.rfind("observed ", 0) == 0) {
      std::string s;
      if (context_date) s += "On " + context_date->human() + ", the ";
      else s += "The ";
      s += p.key + " was " + p.value;
      if (!p.unit.empty()) s += " " + p.unit;
      append(s + ".");
      continue;
    }
    append(feature_sentence(p));
  }

  Description d;
  d.text = std::move(text);
  d.cache_key = cache_key_for(cfg, rec);
  d.provenance = Provenance{DescriptionSource::template_engine, cfg.template_version,
                            iso8601_utc_now()};
  return d;
}

std::string build_remote_prompt(const PromptConfig& cfg, const LinearizedRecord& rec) {
  std::string prompt = cfg.prefix + "\n\n";
  for (const auto& p : rec.pairs) {
    prompt += "[" + p.key + ": " + p.value + "]\n";
  }
  prompt += "\n" + cfg.suffix;
  return prompt;
}

namespace {

struct ParsedUrl {
  std::string scheme_host_port;  // httplib client target
  std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("base_url must start with http:// or https://");
  }
  auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = url;
  } else {
    out.scheme_host_port = url.substr(0, path_start);
    out.path_prefix = url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

}  // namespace

Description describe_remote(const PromptConfig& cfg, const LinearizedRecord& rec,
                            RemoteStats* stats) {
  if (cfg.source != DescriptionSource::remote_llm || !cfg.remote) {
    throw std::invalid_argument("describe_remote requires a remote_llm prompt configuration");
  }
  RemoteConfig rc = *cfg.remote;
  if (const char* env_url = std::getenv("FREE_LLM_BASE_URL"); env_url && *env_url) {
    rc.base_url = env_url;
  }
  ParsedUrl url = parse_base_url(rc.base_url);

  nlohmann::json body = {
      {"model", rc.model_id},
      {"messages", nlohmann::json::array(
                       {{{"role", "user"}, {"content", build_remote_prompt(cfg, rec)}}})}};
  std::string payload = body.dump();

  // bit-exact request logging, enabled by FREE_LLM_DEBUG_LOG=<path>
  if (const char* log_path = std::getenv("FREE_LLM_DEBUG_LOG"); log_path && *log_path) {
    static std::mutex log_mu;
    std::lock_guard lock(log_mu);
    std::ofstream log(log_path, std::ios::app | std::ios::binary);
    log << url.scheme_host_port << url.path_prefix << "/v1/chat/completions\n"
        << payload << "\n";
  }

  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int>(rc.timeout_s * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(static_cast<int>(rc.timeout_s * 1000)));
  httplib::Headers headers;
  if (const char* key = std::getenv("FREE_LLM_API_KEY"); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const std::string route = url.path_prefix + "/v1/chat/completions";
  std::string last_error;
  int attempts = rc.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(static_cast<long long>(rc.backoff_ms) << (attempt - 1)));
    }
    if (stats) ++stats->attempts;
    auto res = client.Post(route, headers, payload, "application/json");
    if (!res) {
      last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status >= 500) {
      last_error = "server status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ProtocolError("chat-completion endpoint returned status " +
                          std::to_string(res->status) +
                          "; falling back to the template engine is permitted");
    }
    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    std::string text;
    if (!reply.is_discarded() && reply.contains("choices") && reply["choices"].is_array() &&
        !reply["choices"].empty()) {
      const auto& first = reply["choices"][0];
      if (first.contains("message") && first["message"].contains("content") &&
          first["message"]["content"].is_string()) {
        text = first["message"]["content"].get<std::string>();
      }
    }
    if (text.empty()) {
      throw ProtocolError(
          "empty completion from chat-completion endpoint; falling back to the template "
          "engine is permitted");
    }
    Description d;
    d.text = std::move(text);
    d.cache_key = cache_key_for(cfg, rec);
    d.provenance = Provenance{DescriptionSource::remote_llm, rc.model_id, iso8601_utc_now()};
    return d;
  }
  throw TransportError("remote description failed after " + std::to_string(attempts) +
                       " attempts: " + last_error +
                       "; falling back to the template engine is permitted");
}

DescriptionCache::DescriptionCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("key") || !rec.contains("text") ||
        !rec["key"].is_string() || !rec["text"].is_string() || rec["text"].get<std::string>().empty()) {
      std::cerr << "warning: skipping corrupt cache line " << lineno << " in " << path_ << "\n";
      continue;
    }
    Description d;
    d.cache_key = rec["key"].get<std::string>();
    d.text = rec["text"].get<std::string>();
    std::string source = rec.value("source", "template");
    d.provenance.source = source == "remote" ? DescriptionSource::remote_llm
                                             : DescriptionSource::template_engine;
    d.provenance.version_or_model = rec.value("version", "");
    d.provenance.created = rec.value("created", "");
    entries_[d.cache_key] = std::move(d);
  }
}

std::optional<Description> DescriptionCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void DescriptionCache::put(const Description& desc) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(desc.cache_key);
  if (it != entries_.end() && it->second.text == desc.text &&
      it->second.provenance.source == desc.provenance.source &&
      it->second.provenance.version_or_model == desc.provenance.version_or_model) {
    return;  // identical content already stored
  }
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to cache file " + path_.string());
  nlohmann::json rec = {
      {"key", desc.cache_key},
      {"text", desc.text},
      {"source", desc.provenance.source == DescriptionSource::remote_llm ? "remote" : "template"},
      {"version", desc.provenance.version_or_model},
      {"created", desc.provenance.created},
  };
  out << rec.dump() << "\n";
  if (!out) throw std::runtime_error("write failed for cache file " + path_.string());
  entries_[desc.cache_key] = desc;
}

std::size_t DescriptionCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

Description describe(const PromptConfig& cfg, const LinearizedRecord& rec,
                     DescriptionCache* cache, RemoteStats* stats) {
  cfg.validate();
  if (cache) {
    if (auto hit = cache->get(cache_key_for(cfg, rec))) {
      if (stats) stats->from_cache = true;
      return *hit;
    }
  }
  Description d = cfg.source == DescriptionSource::remote_llm ? describe_remote(cfg, rec, stats)
                                                              : render_template(cfg, rec);
  if (cache) cache->put(d);
  return d;
}

}  // namespace freeml
