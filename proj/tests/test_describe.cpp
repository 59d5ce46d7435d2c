#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "freeml/describe.hpp"

using namespace freeml;

namespace {

Sample paper_sample() {
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2006-12-04");
  s.add_feature("rainfall", 0.0, "millimeters");
  s.add_feature("air_temperature", -3.36, "degrees Celsius");
  s.add_feature("solar_radiation", 108.26, "watts per square meter");
  return s;
}

std::filesystem::path fresh_cache_path(const std::string& name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(path);
  return path;
}

std::size_t line_count(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("template rendering matches the documented phrasing") {
  PromptConfig cfg = PromptConfig::defaults();
  Description d = render_template(cfg, linearize(paper_sample()));

  CHECK(d.text.find("December 4, 2006") != std::string::npos);
  CHECK(d.text.find("no recorded rainfall") != std::string::npos);
  CHECK(d.text.find("-3.36 degrees Celsius") != std::string::npos);
  CHECK(d.text.find("freezing-thawing and phase change may occur") != std::string::npos);
  CHECK(d.text.find("108.26 watts per square meter") != std::string::npos);
  CHECK(d.provenance.version_or_model == "v1");
}

TEST_CASE("positive temperatures carry no freezing phrase") {
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2006-07-04");
  s.add_feature("air_temperature", 21.3, "degrees Celsius");
  Description d = render_template(PromptConfig::defaults(), linearize(s));
  CHECK(d.text.find("21.30 degrees Celsius") != std::string::npos);
  CHECK(d.text.find("freezing-thawing") == std::string::npos);
}

TEST_CASE("date-only record renders a single sentence") {
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2006-12-04");
  Description d = render_template(PromptConfig::defaults(), linearize(s));
  CHECK(d.text == "The following measurements were recorded on December 4, 2006.");
}

TEST_CASE("auxiliary pairs render with their own date sentence prefix") {
  Sample s = paper_sample();
  std::vector<AuxObservation> aux = {
      {"s1", Date::parse("2006-12-03"), 4.21, AuxRelation::current_site}};
  Description d =
      render_template(PromptConfig::defaults(), linearize_with_auxiliary(s, aux));
  CHECK(d.text.find("On December 3, 2006, the observed water temperature at site s1 was "
                    "4.21 degrees Celsius.") != std::string::npos);
  CHECK(d.text.find("The following measurements were recorded on December 4, 2006.") !=
        std::string::npos);
}

TEST_CASE("rendering is byte-deterministic with a stable cache key") {
  PromptConfig cfg = PromptConfig::defaults();
  Description a = render_template(cfg, linearize(paper_sample()));
  Description b = render_template(cfg, linearize(paper_sample()));
  CHECK(a.text == b.text);
  CHECK(a.cache_key == b.cache_key);
  CHECK(a.cache_key.size() == 16);

  // the key depends on the prompt
  PromptConfig other = cfg;
  other.prefix = "different prefix";
  CHECK(cache_key_for(other, linearize(paper_sample())) != a.cache_key);
  PromptConfig versioned = cfg;
  versioned.template_version = "v2";
  CHECK(cache_key_for(versioned, linearize(paper_sample())) != a.cache_key);
}

TEST_CASE("pipeline composition: empty aux gives identical descriptions") {
  PromptConfig cfg = PromptConfig::defaults();
  Sample s = paper_sample();
  Description plain = render_template(cfg, linearize(s));
  Description via_aux = render_template(cfg, linearize_with_auxiliary(s, {}));
  CHECK(plain.text == via_aux.text);
  CHECK(plain.cache_key == via_aux.cache_key);
}

TEST_CASE("cache keys are collision-free over a large distinct corpus") {
  PromptConfig cfg = PromptConfig::defaults();
  std::vector<std::string> keys;
  keys.reserve(100000);
  LinearizedRecord rec;
  rec.site_id = "s1";
  rec.date = Date::parse("2006-12-04");
  rec.pairs = {{"date", "2006-12-04", ""}, {"air temperature", "", "degrees Celsius"}};
  for (int i = 0; i < 100000; ++i) {
    rec.pairs[1].value = render_number(i * 0.01 - 300.0);
    keys.push_back(cache_key_for(cfg, rec));
  }
  std::sort(keys.begin(), keys.end());
  CHECK(std::adjacent_find(keys.begin(), keys.end()) == keys.end());
}

TEST_CASE("distinct pair values render distinct texts") {
  PromptConfig cfg = PromptConfig::defaults();
  std::set<std::string> texts;
  LinearizedRecord rec;
  rec.site_id = "s1";
  rec.date = Date::parse("2006-12-04");
  rec.pairs = {{"date", "2006-12-04", ""}, {"air temperature", "", "degrees Celsius"}};
  for (int i = 0; i < 1000; ++i) {
    rec.pairs[1].value = render_number(i * 0.07 - 30.0);
    texts.insert(render_template(cfg, rec).text);
  }
  CHECK(texts.size() == 1000);
}

TEST_CASE("description cache is append-only and idempotent") {
  auto path = fresh_cache_path("free_desc_cache.jsonl");
  PromptConfig cfg = PromptConfig::defaults();
  Description d = render_template(cfg, linearize(paper_sample()));

  {
    DescriptionCache cache(path);
    CHECK_FALSE(cache.get(d.cache_key).has_value());  // empty cache
    cache.put(d);
    auto hit = cache.get(d.cache_key);
    REQUIRE(hit.has_value());
    CHECK(hit->text == d.text);
    CHECK(line_count(path) == 1);
    cache.put(d);  // identical content: no growth
    CHECK(line_count(path) == 1);
    Description d2 = d;
    d2.provenance.created = "2001-01-01T00:00:00Z";  // timestamp alone is not new content
    cache.put(d2);
    CHECK(line_count(path) == 1);
  }

  // reopen: most recent entry wins, corrupt lines are skipped
  {
    std::ofstream out(path, std::ios::app);
    out << "{not json}\n";
    nlohmann::json updated = {{"key", d.cache_key}, {"text", "newer text"},
                              {"source", "template"}, {"version", "v1"},
                              {"created", "2002-01-01T00:00:00Z"}};
    out << updated.dump() << "\n";
  }
  DescriptionCache cache(path);
  auto hit = cache.get(d.cache_key);
  REQUIRE(hit.has_value());
  CHECK(hit->text == "newer text");
}

TEST_CASE("describe serves template results through the cache") {
  auto path = fresh_cache_path("free_desc_cache2.jsonl");
  DescriptionCache cache(path);
  PromptConfig cfg = PromptConfig::defaults();
  LinearizedRecord rec = linearize(paper_sample());

  RemoteStats s1, s2;
  Description a = describe(cfg, rec, &cache, &s1);
  CHECK_FALSE(s1.from_cache);
  Description b = describe(cfg, rec, &cache, &s2);
  CHECK(s2.from_cache);
  CHECK(a.text == b.text);
}

TEST_CASE("remote description client") {
  int port = 0;
  std::atomic<int> requests{0};
  std::string reply_text = "A cold, dry early-winter day.";
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    auto body = nlohmann::json::parse(req.body);
    CHECK(body["model"] == "test-model");
    std::string prompt = body["messages"][0]["content"];
    CHECK(prompt.find("[rainfall: 0]") != std::string::npos);
    CHECK(prompt.find("[solar radiation: 108.26]") != std::string::npos);
    nlohmann::json out = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", reply_text}}}}}}};
    res.set_content(out.dump(), "application/json");
  });
  server.Post("/v1/empty", [](const httplib::Request&, httplib::Response&) {});
  port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  PromptConfig cfg = PromptConfig::defaults();
  cfg.source = DescriptionSource::remote_llm;
  cfg.remote = RemoteConfig{"http://127.0.0.1:" + std::to_string(port), "test-model", 5.0, 2, 1};
  LinearizedRecord rec = linearize(paper_sample());

  SUBCASE("pass-through of the completion text") {
    RemoteStats stats;
    Description d = describe_remote(cfg, rec, &stats);
    CHECK(d.text == reply_text);
    CHECK(d.provenance.version_or_model == "test-model");
    CHECK(stats.attempts == 1);
  }

  SUBCASE("cache hits make zero network calls") {
    auto path = fresh_cache_path("free_desc_cache3.jsonl");
    DescriptionCache cache(path);
    RemoteStats s1;
    describe(cfg, rec, &cache, &s1);
    int after_first = requests.load();
    RemoteStats s2;
    Description d = describe(cfg, rec, &cache, &s2);
    CHECK(s2.from_cache);
    CHECK(s2.attempts == 0);
    CHECK(requests.load() == after_first);
    CHECK(d.text == reply_text);
  }

  SUBCASE("empty completion is a protocol error") {
    PromptConfig bad = cfg;
    httplib::Server empty_server;
    empty_server.Post("/v1/chat/completions",
                      [](const httplib::Request&, httplib::Response& res) {
                        nlohmann::json out = {
                            {"choices",
                             {{{"message", {{"role", "assistant"}, {"content", ""}}}}}}};
                        res.set_content(out.dump(), "application/json");
                      });
    int eport = empty_server.bind_to_any_port("127.0.0.1");
    std::thread et([&] { empty_server.listen_after_bind(); });
    empty_server.wait_until_ready();
    bad.remote->base_url = "http://127.0.0.1:" + std::to_string(eport);
    CHECK_THROWS_AS(describe_remote(bad, rec), ProtocolError);
    empty_server.stop();
    et.join();
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("unreachable endpoint fails after max_retries + 1 attempts") {
  PromptConfig cfg = PromptConfig::defaults();
  cfg.source = DescriptionSource::remote_llm;
  // nothing listens on this port
  cfg.remote = RemoteConfig{"http://127.0.0.1:1", "test-model", 0.5, 2, 1};
  RemoteStats stats;
  CHECK_THROWS_WITH_AS(describe_remote(cfg, linearize(paper_sample()), &stats),
                       doctest::Contains("after 3 attempts"), TransportError);
  CHECK(stats.attempts == 3);
}
