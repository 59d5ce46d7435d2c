#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freeml/core.hpp"

namespace freeml {

// First-order relaxation toward a linear equilibrium temperature:
//   T_eq(t)  = a0 + a1*T_air(t) + a2*SW(t) + a3*cloud(t)
//   T_w(t+1) = max(0, T_w(t) + k*(T_eq(t) - T_w(t)))
struct SimParams {
  double relaxation_rate = 0.2;  // k per day, in (0, 1]
  double eq_intercept = 2.0;     // a0, deg C
  double eq_air_coeff = 0.9;     // a1, per deg C air
  double eq_solar_coeff = 0.01;  // a2, deg C per W/m2
  double eq_cloud_coeff = -1.5;  // a3, deg C per cloud fraction
  double initial_temp = 8.0;     // T_w(0), floored at 0 deg C

  void validate() const;
};

struct WeatherGenParams {
  double air_mean = 10.0;       // deg C seasonal mean
  double air_amplitude = 12.0;  // deg C seasonal swing
  double air_phase_day = 15.0;  // coldest day of year
  double air_noise_sd = 2.5;    // AR(1) stationary sd
  double air_noise_rho = 0.8;

  double solar_max = 320.0;             // clear-sky peak, W/m2
  double solar_seasonal_amplitude = 0.75;  // 0..1 fraction of seasonal dimming

  double rain_rate = 0.25;   // daily event probability, in [0, 1]
  double rain_scale = 5.0;   // mean event magnitude, mm

  double cloud_mean = 0.45;
  double cloud_persistence = 0.85;
  double cloud_noise_sd = 0.18;

  double site_air_offset_range = 0.0;          // per-site U(-r, r) added to air_mean
  double site_solar_scale_range = 0.0;         // per-site U(1-r, 1+r) on solar_max
  double site_groundwater_offset_range = 2.0;  // per-site U(-r, r) on groundwater temp

  std::uint64_t seed = 1;
  Date start_date = Date::parse("2000-01-01");

  void validate() const;
};

const std::vector<std::string>& meteorological_features();
const std::vector<std::string>& additional_features();
// meteorological + additional, in CSV column order.
const std::vector<std::string>& synthetic_schema();

// Seeded synthetic weather drivers; per-site streams use derived seeds, so
// output does not depend on site iteration order.
Dataset generate_weather(const std::vector<std::string>& sites, int days,
                         const WeatherGenParams& params);

// Fills simulated_label for every sample. Requires air_temperature,
// solar_radiation and cloud_cover drivers on each sample.
Dataset simulate_stream_temperature(const Dataset& drivers, const SimParams& params);

// Observed labels as a perturbed view of the simulation: per-site bias plus
// Gaussian noise, floored at 0. The site bias is
//   bias * (U(0.5, 1.5) + 0.3 * site soil-regime level)
// where the soil level is the site's mean subsurface_temperature relative to
// the cross-site mean (zero when the feature is absent), so part of the
// sim-to-obs gap is readable from the subsurface feature and part is latent.
// bias = 0 disables both components.
Dataset perturb_to_observations(const Dataset& simulated, double bias, double noise_sd,
                                std::uint64_t seed);

// The built-in synthetic benchmark: weather + simulated labels + perturbed
// observations for `n_sites` sites ("s1", "s2", ...) over `days` days.
struct BenchmarkSpec {
  int n_sites = 8;
  int days = 2400;
  WeatherGenParams weather;
  SimParams sim;
  double obs_bias = 6.0;
  double obs_noise_sd = 0.5;
  std::uint64_t obs_seed = 17;
};

Dataset make_benchmark(const BenchmarkSpec& spec);

}  // namespace freeml
