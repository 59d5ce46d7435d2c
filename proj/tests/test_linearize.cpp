#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "freeml/linearize.hpp"

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

Sample filtered(const Sample& s, const std::set<std::string>& keep) {
  Sample out;
  out.site_id = s.site_id;
  out.date = s.date;
  out.observed_label = s.observed_label;
  out.simulated_label = s.simulated_label;
  for (const auto& f : s.features) {
    if (keep.count(f.name)) out.add_feature(f.name, f.value, f.unit);
  }
  return out;
}

}  // namespace

TEST_CASE("canonical number rendering") {
  CHECK(render_number(0.0) == "0");
  CHECK(render_number(151.14) == "151.14");
  CHECK(render_number(-3.36) == "-3.36");
  CHECK(render_number(108.26) == "108.26");
  CHECK(render_number(1.5) == "1.50");
  CHECK(render_number(2.0) == "2");
  CHECK(render_number(1.999) == "2");
  CHECK(render_number(-0.001) == "0");
  CHECK(render_number(-17.0) == "-17");
}

TEST_CASE("linearize pairs column names with rendered values") {
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2006-12-04");
  s.add_feature("rainfall", 0.0, "millimeters");
  s.add_feature("solar_radiation", 151.14, "watts per square meter");

  LinearizedRecord rec = linearize(s);
  REQUIRE(rec.pairs.size() == 3);
  CHECK(rec.pairs[0].key == "date");
  CHECK(rec.pairs[0].value == "2006-12-04");
  CHECK(rec.pairs[1].key == "rainfall");
  CHECK(rec.pairs[1].value == "0");
  CHECK(rec.pairs[2].key == "solar radiation");
  CHECK(rec.pairs[2].value == "151.14");
  CHECK(rec.pairs[2].unit == "watts per square meter");
}

TEST_CASE("linearize of an empty sample emits the date pair only") {
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2006-12-04");
  LinearizedRecord rec = linearize(s);
  REQUIRE(rec.pairs.size() == 1);
  CHECK(rec.pairs[0].key == "date");
  CHECK(rec.pairs[0].value == "2006-12-04");
}

TEST_CASE("feature subsets skip silently and match pre-filtered samples") {
  Sample s = paper_sample();

  SUBCASE("single-feature subset") {
    std::set<std::string> keep = {"rainfall"};
    LinearizedRecord a = linearize(s, keep);
    REQUIRE(a.pairs.size() == 2);
    CHECK(a.pairs[1].key == "rainfall");
    CHECK(a == linearize(filtered(s, keep), keep));
  }
  SUBCASE("subset naming an absent feature is fine") {
    std::set<std::string> keep = {"rainfall", "humidity"};
    LinearizedRecord a = linearize(s, keep);
    CHECK(a.pairs.size() == 2);
  }
  SUBCASE("exhaustive skip-equivalence over all subsets of three features") {
    std::vector<std::string> names = {"rainfall", "air_temperature", "solar_radiation"};
    for (unsigned bits = 0; bits < 8; ++bits) {
      std::set<std::string> keep;
      for (unsigned k = 0; k < 3; ++k) {
        if (bits & (1u << k)) keep.insert(names[k]);
      }
      CHECK(linearize(s, keep) == linearize(filtered(s, keep), keep));
      CHECK(linearize(s, keep) == linearize(filtered(s, keep)));
    }
  }
}

TEST_CASE("auxiliary linearization follows the concatenation order") {
  Sample s = paper_sample();

  SUBCASE("empty aux reduces to plain linearize, byte-identical") {
    CHECK(linearize_with_auxiliary(s, {}) == linearize(s));
  }

  SUBCASE("current-site observation leads with its date") {
    std::vector<AuxObservation> aux = {
        {"s1", Date::parse("2006-12-03"), 4.21, AuxRelation::current_site}};
    LinearizedRecord rec = linearize_with_auxiliary(s, aux);
    REQUIRE(rec.pairs.size() == 6);
    CHECK(rec.pairs[0].key == "date");
    CHECK(rec.pairs[0].value == "2006-12-03");
    CHECK(rec.pairs[1].key == "observed water temperature at site s1");
    CHECK(rec.pairs[1].value == "4.21");
    CHECK(rec.pairs[2].key == "date");
    CHECK(rec.pairs[2].value == "2006-12-04");
    CHECK(rec.pairs[3].key == "rainfall");
  }

  SUBCASE("one current-site and two neighbor observations give 4 leading pairs") {
    std::vector<AuxObservation> aux = {
        {"s1", Date::parse("2006-12-03"), 4.21, AuxRelation::current_site},
        {"s2", Date::parse("2006-12-03"), 5.0, AuxRelation::neighbor},
        {"s3", Date::parse("2006-12-03"), 6.5, AuxRelation::neighbor}};
    LinearizedRecord rec = linearize_with_auxiliary(s, aux);
    // date + 3 observations, then the sample's own date pair
    CHECK(rec.pairs[4].key == "date");
    CHECK(rec.pairs[4].value == "2006-12-04");
    CHECK(rec.pairs[1].key == "observed water temperature at site s1");
    CHECK(rec.pairs[2].key == "observed water temperature at neighbor site s2");
    CHECK(rec.pairs[3].key == "observed water temperature at neighbor site s3");
  }

  SUBCASE("aux dated on or after the sample is rejected") {
    std::vector<AuxObservation> aux = {
        {"s1", Date::parse("2006-12-04"), 4.21, AuxRelation::current_site}};
    CHECK_THROWS_AS(linearize_with_auxiliary(paper_sample(), aux), std::invalid_argument);
  }

  SUBCASE("custom target name appears in the key") {
    std::vector<AuxObservation> aux = {
        {"s1", Date::parse("2006-12-03"), 4.21, AuxRelation::current_site}};
    LinearizedRecord rec = linearize_with_auxiliary(s, aux, "streamflow");
    CHECK(rec.pairs[1].key == "observed streamflow at site s1");
  }
}

TEST_CASE("records are deterministic and serialize to the documented JSON") {
  Sample s = paper_sample();
  LinearizedRecord a = linearize(s);
  LinearizedRecord b = linearize(s);
  CHECK(a == b);

  nlohmann::json j = a.to_json();
  CHECK(j["sample"][0] == "s1");
  CHECK(j["sample"][1] == "2006-12-04");
  CHECK(j["pairs"].size() == 4);
  CHECK(j["pairs"][1][0] == "rainfall");
  CHECK(j["pairs"][1][1] == "0");
}
