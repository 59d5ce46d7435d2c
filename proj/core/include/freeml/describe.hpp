#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "freeml/linearize.hpp"

namespace freeml {

enum class DescriptionSource { template_engine, remote_llm };

struct RemoteConfig {
  std::string base_url;  // e.g. https://api.example.com (FREE_LLM_BASE_URL overrides when set)
  std::string model_id;
  double timeout_s = 30.0;
  int max_retries = 3;
  int backoff_ms = 250;  // doubled per attempt
};

struct PromptConfig {
  std::string prefix;  // context-setting prefix
  std::string suffix;  // directive suffix
  std::string template_version = "v1";
  DescriptionSource source = DescriptionSource::template_engine;
  std::optional<RemoteConfig> remote;

  static PromptConfig defaults();
  void validate() const;
};

struct Provenance {
  DescriptionSource source = DescriptionSource::template_engine;
  std::string version_or_model;  // template_version or remote model id
  std::string created;           // ISO-8601 UTC
};

struct Description {
  std::string text;
  std::string cache_key;  // 16 hex chars
  Provenance provenance;
};

std::string iso8601_utc_now();

// Content hash of (template_version or model_id, prefix, pairs, suffix).
std::string cache_key_for(const PromptConfig& cfg, const LinearizedRecord& rec);

// Deterministic natural-language rendering: a date sentence, then one sentence
// per pair. Pairs with unknown units fall back to a unitless sentence (with a
// one-time stderr warning per key).
Description render_template(const PromptConfig& cfg, const LinearizedRecord& rec);

// The prompt POSTed to the chat-completion endpoint:
// prefix, "[key: value]" lines, suffix.
std::string build_remote_prompt(const PromptConfig& cfg, const LinearizedRecord& rec);

struct RemoteStats {
  int attempts = 0;
  bool from_cache = false;
};

// Sends the assembled prompt to cfg.remote's endpoint, retrying transport
// failures with exponential backoff. Throws TransportError / ProtocolError.
Description describe_remote(const PromptConfig& cfg, const LinearizedRecord& rec,
                            RemoteStats* stats = nullptr);

// Append-only JSON-lines store, one {"key","text","source","version","created"}
// record per line. get() returns the most recent entry for a key; put() is a
// no-op for content already stored. Corrupt lines are skipped with a warning.
class DescriptionCache {
 public:
  explicit DescriptionCache(std::filesystem::path path);

  std::optional<Description> get(const std::string& key) const;
  void put(const Description& desc);
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, Description> entries_;
};

// Cache-aware entry point: serve from cache when possible, otherwise render
// (template source) or call the remote endpoint, then store the result.
Description describe(const PromptConfig& cfg, const LinearizedRecord& rec,
                     DescriptionCache* cache = nullptr, RemoteStats* stats = nullptr);

}  // namespace freeml
