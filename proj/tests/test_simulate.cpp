#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "freeml/simulate.hpp"

using namespace freeml;

namespace {

// single site, constant drivers
Dataset constant_drivers(int days, double air, double solar, double cloud) {
  Dataset ds;
  ds.set_schema(synthetic_schema());
  Date start = Date::parse("2000-01-01");
  for (int d = 0; d < days; ++d) {
    Sample s;
    s.site_id = "s1";
    s.date = start.plus_days(d);
    s.add_feature("air_temperature", air);
    s.add_feature("solar_radiation", solar);
    s.add_feature("cloud_cover", cloud);
    ds.add(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("weather generation is seeded and deterministic") {
  WeatherGenParams params;
  Dataset a = generate_weather({"s1", "s2"}, 50, params);
  Dataset b = generate_weather({"s1", "s2"}, 50, params);
  CHECK(a == b);

  params.seed = 2;
  Dataset c = generate_weather({"s1", "s2"}, 50, params);
  CHECK_FALSE(a == c);

  CHECK(a.size() == 100);
  CHECK(a.schema() == synthetic_schema());
  CHECK_THROWS_AS(generate_weather({"s1"}, 0, params), std::invalid_argument);
}

TEST_CASE("per-site streams do not depend on the site list order") {
  WeatherGenParams params;
  Dataset a = generate_weather({"s1", "s2"}, 30, params);
  Dataset b = generate_weather({"s2", "s1"}, 30, params);
  for (const auto& s : a.samples()) {
    const Sample* other = b.find(s.site_id, s.date);
    REQUIRE(other != nullptr);
    CHECK(s.features == other->features);
  }
}

TEST_CASE("zero amplitudes and zero noise produce constant series") {
  WeatherGenParams params;
  params.air_amplitude = 0.0;
  params.air_noise_sd = 0.0;
  params.solar_seasonal_amplitude = 0.0;
  params.cloud_noise_sd = 0.0;
  params.rain_rate = 0.0;
  params.site_air_offset_range = 0.0;
  params.site_solar_scale_range = 0.0;
  Dataset ds = generate_weather({"s1"}, 400, params);
  const auto& first = ds.samples().front();
  for (const auto& s : ds.samples()) {
    for (std::size_t k = 0; k < first.features.size(); ++k) {
      CHECK(s.features[k].value == doctest::Approx(first.features[k].value).epsilon(1e-12));
    }
  }
}

TEST_CASE("full cloud cover caps solar at 30% of clear sky") {
  WeatherGenParams clear;
  clear.cloud_mean = 0.0;
  clear.cloud_noise_sd = 0.0;
  WeatherGenParams overcast = clear;
  overcast.cloud_mean = 1.0;

  Dataset sunny = generate_weather({"s1"}, 365, clear);
  Dataset cloudy = generate_weather({"s1"}, 365, overcast);
  for (std::size_t i = 0; i < sunny.size(); ++i) {
    double clear_solar = sunny.samples()[i].find_feature("solar_radiation")->value;
    double cloudy_solar = cloudy.samples()[i].find_feature("solar_radiation")->value;
    CHECK(cloudy_solar <= 0.3 * clear_solar + 1e-9);
  }
}

TEST_CASE("full relaxation (k=1) tracks max(0, T_eq)") {
  Dataset drivers = constant_drivers(5, -10.0, 0.0, 0.0);  // T_eq = 2 - 9 = -7
  SimParams p;
  p.relaxation_rate = 1.0;
  p.initial_temp = 4.0;
  Dataset out = simulate_stream_temperature(drivers, p);
  CHECK(*out.samples()[0].simulated_label == doctest::Approx(4.0));
  for (std::size_t i = 1; i < out.size(); ++i) {
    CHECK(*out.samples()[i].simulated_label == doctest::Approx(0.0));  // clamped at floor
  }

  Dataset warm = simulate_stream_temperature(constant_drivers(5, 10.0, 100.0, 0.5), p);
  double t_eq = 2.0 + 0.9 * 10.0 + 0.01 * 100.0 - 1.5 * 0.5;
  for (std::size_t i = 1; i < warm.size(); ++i) {
    CHECK(*warm.samples()[i].simulated_label == doctest::Approx(t_eq));
  }
}

TEST_CASE("constant drivers converge to the fixed point") {
  SimParams p;  // k = 0.2
  Dataset out = simulate_stream_temperature(constant_drivers(201, 15.0, 200.0, 0.3), p);
  double t_eq = 2.0 + 0.9 * 15.0 + 0.01 * 200.0 - 1.5 * 0.3;
  CHECK(std::abs(*out.samples()[200].simulated_label - std::max(0.0, t_eq)) < 1e-6);
}

TEST_CASE("hand-computed relaxation sequence 5, 7.5, 8.75, 9.375") {
  SimParams p;
  p.relaxation_rate = 0.5;
  p.initial_temp = 5.0;
  p.eq_intercept = 10.0;  // T_eq identically 10
  p.eq_air_coeff = 0.0;
  p.eq_solar_coeff = 0.0;
  p.eq_cloud_coeff = 0.0;
  Dataset out = simulate_stream_temperature(constant_drivers(4, 0.0, 0.0, 0.0), p);
  CHECK(*out.samples()[0].simulated_label == doctest::Approx(5.0));
  CHECK(*out.samples()[1].simulated_label == doctest::Approx(7.5));
  CHECK(*out.samples()[2].simulated_label == doctest::Approx(8.75));
  CHECK(*out.samples()[3].simulated_label == doctest::Approx(9.375));
}

TEST_CASE("missing required driver raises a named error") {
  Dataset ds;
  Sample s;
  s.site_id = "s1";
  s.date = Date::parse("2000-01-01");
  s.add_feature("air_temperature", 5.0);
  s.add_feature("solar_radiation", 100.0);
  ds.add(s);
  CHECK_THROWS_WITH_AS(simulate_stream_temperature(ds, SimParams{}),
                       doctest::Contains("cloud_cover"), std::invalid_argument);
}

TEST_CASE("relaxation rate outside (0,1] is rejected") {
  SimParams p;
  p.relaxation_rate = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.relaxation_rate = 1.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("perturbed observations") {
  SimParams p;
  p.eq_intercept = 15.0;  // constant T_eq far from the floor
  p.eq_air_coeff = 0.0;
  p.eq_solar_coeff = 0.0;
  p.eq_cloud_coeff = 0.0;
  p.relaxation_rate = 1.0;
  p.initial_temp = 15.0;
  Dataset sim = simulate_stream_temperature(constant_drivers(10000, 0.0, 0.0, 0.0), p);

  SUBCASE("bias 0, sd 0 is the identity") {
    Dataset obs = perturb_to_observations(sim, 0.0, 0.0, 3);
    for (const auto& s : obs.samples()) {
      CHECK(*s.observed_label == *s.simulated_label);
    }
  }
  SUBCASE("gaussian noise has the configured variance") {
    Dataset obs = perturb_to_observations(sim, 0.0, 0.5, 3);
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& s : obs.samples()) {
      double d = *s.observed_label - *s.simulated_label;
      sum += d;
      sum_sq += d * d;
    }
    double n = static_cast<double>(obs.size());
    double var = sum_sq / n - (sum / n) * (sum / n);
    CHECK(var > 0.2);
    CHECK(var < 0.3);
  }
  SUBCASE("deterministic per seed") {
    Dataset a = perturb_to_observations(sim, 1.0, 0.5, 3);
    Dataset b = perturb_to_observations(sim, 1.0, 0.5, 3);
    CHECK(a == b);
    Dataset c = perturb_to_observations(sim, 1.0, 0.5, 4);
    CHECK_FALSE(a == c);
  }
  SUBCASE("negative noise sd is rejected") {
    CHECK_THROWS_AS(perturb_to_observations(sim, 0.0, -0.1, 1), std::invalid_argument);
  }
  SUBCASE("perturbing without simulated labels is an error") {
    Dataset bare = constant_drivers(3, 0.0, 0.0, 0.0);
    CHECK_THROWS_AS(perturb_to_observations(bare, 0.0, 0.1, 1), std::invalid_argument);
  }
}

TEST_CASE("simulator properties on the default benchmark") {
  BenchmarkSpec spec;
  spec.n_sites = 3;
  spec.days = 600;
  Dataset ds = make_benchmark(spec);

  SUBCASE("non-negativity of simulated and observed labels") {
    for (const auto& s : ds.samples()) {
      CHECK(*s.simulated_label >= 0.0);
      CHECK(*s.observed_label >= 0.0);
    }
  }

  SUBCASE("monotone response to warmer air") {
    Dataset warmer;
    warmer.set_schema(ds.schema());
    for (const auto& s : ds.samples()) {
      Sample t = s;
      for (auto& f : t.features) {
        if (f.name == "air_temperature") f.value += 2.0;
      }
      t.simulated_label.reset();
      t.observed_label.reset();
      warmer.add(std::move(t));
    }
    Dataset warm_sim = simulate_stream_temperature(warmer, spec.sim);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(*warm_sim.samples()[i].simulated_label >= *ds.samples()[i].simulated_label - 1e-12);
    }
  }

  SUBCASE("boundedness by initial temperature and max equilibrium") {
    for (const auto& site : ds.sites()) {
      double max_eq = -1e30;
      for (std::size_t idx : ds.site_indices(site)) {
        const Sample& s = ds.samples()[idx];
        double eq = spec.sim.eq_intercept +
                    spec.sim.eq_air_coeff * s.find_feature("air_temperature")->value +
                    spec.sim.eq_solar_coeff * s.find_feature("solar_radiation")->value +
                    spec.sim.eq_cloud_coeff * s.find_feature("cloud_cover")->value;
        max_eq = std::max(max_eq, eq);
      }
      double bound = std::max(spec.sim.initial_temp, max_eq) + 1e-9;
      for (std::size_t idx : ds.site_indices(site)) {
        CHECK(*ds.samples()[idx].simulated_label <= bound);
      }
    }
  }
}
