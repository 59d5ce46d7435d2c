#include "freeml/simulate.hpp"

#include <algorithm>
#include <cmath>

namespace freeml {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kYearDays = 365.25;
constexpr double kSolarCloudDimming = 0.7;  // solar = clear-sky * (1 - 0.7*cloud)
// soil columns relax toward air temperature (shifted by the site's soil
// thermal offset); the shallow subsurface layer tracks on a scale comparable
// to the stream itself
constexpr double kGroundwaterRate = 0.02;
constexpr double kSubsurfaceRate = 0.2;
// fraction of the observation bias tied to the site's soil thermal regime
constexpr double kSoilBiasCoupling = 0.3;
}  // namespace

void SimParams::validate() const {
  if (!(relaxation_rate > 0.0 && relaxation_rate <= 1.0)) {
    throw std::invalid_argument("relaxation_rate must lie in (0, 1]");
  }
  for (double v : {eq_intercept, eq_air_coeff, eq_solar_coeff, eq_cloud_coeff, initial_temp}) {
    if (!std::isfinite(v)) throw std::invalid_argument("simulator coefficients must be finite");
  }
}

void WeatherGenParams::validate() const {
  if (air_amplitude < 0.0 || solar_seasonal_amplitude < 0.0 || air_noise_sd < 0.0 ||
      cloud_noise_sd < 0.0 || site_air_offset_range < 0.0 || site_solar_scale_range < 0.0 ||
      site_groundwater_offset_range < 0.0) {
    throw std::invalid_argument("weather amplitudes must be non-negative");
  }
  if (solar_seasonal_amplitude > 1.0) {
    throw std::invalid_argument("solar_seasonal_amplitude must lie in [0, 1]");
  }
  if (!(rain_rate >= 0.0 && rain_rate <= 1.0)) {
    throw std::invalid_argument("rain_rate must lie in [0, 1]");
  }
  if (!(air_noise_rho >= 0.0 && air_noise_rho < 1.0) ||
      !(cloud_persistence >= 0.0 && cloud_persistence < 1.0)) {
    throw std::invalid_argument("persistence parameters must lie in [0, 1)");
  }
  if (solar_max < 0.0 || rain_scale < 0.0) {
    throw std::invalid_argument("solar_max and rain_scale must be non-negative");
  }
}

const std::vector<std::string>& meteorological_features() {
  static const std::vector<std::string> kList = {"rainfall", "air_temperature",
                                                 "solar_radiation"};
  return kList;
}

const std::vector<std::string>& additional_features() {
  static const std::vector<std::string> kList = {"cloud_cover", "groundwater_temperature",
                                                 "subsurface_temperature",
                                                 "potential_evapotranspiration"};
  return kList;
}

const std::vector<std::string>& synthetic_schema() {
  static const std::vector<std::string> kList = [] {
    std::vector<std::string> all = meteorological_features();
    const auto& extra = additional_features();
    all.insert(all.end(), extra.begin(), extra.end());
    return all;
  }();
  return kList;
}

Dataset generate_weather(const std::vector<std::string>& sites, int days,
                         const WeatherGenParams& params) {
  if (days < 1) throw std::invalid_argument("days must be at least 1");
  params.validate();

  Dataset ds;
  ds.set_schema(synthetic_schema());
  const auto& units = default_units();
  auto unit_of = [&](const std::string& name) {
    auto it = units.find(name);
    return it == units.end() ? std::string{} : it->second;
  };

  for (const auto& site : sites) {
    Rng rng(derive_seed(params.seed, "weather:" + site));
    double site_air_offset =
        rng.uniform(-params.site_air_offset_range, params.site_air_offset_range);
    double site_solar_scale =
        rng.uniform(1.0 - params.site_solar_scale_range, 1.0 + params.site_solar_scale_range);
    double site_soil_offset = rng.uniform(-params.site_groundwater_offset_range,
                                          params.site_groundwater_offset_range);

    double air_noise = 0.0;
    double cloud = params.cloud_mean;
    double ground = params.air_mean + site_air_offset + site_soil_offset;
    double subsurface = params.air_mean + site_air_offset + site_soil_offset;
    double innovation_sd = params.air_noise_sd * std::sqrt(1.0 - params.air_noise_rho *
                                                                     params.air_noise_rho);

    for (int d = 0; d < days; ++d) {
      Date date = params.start_date.plus_days(d);
      double doy = static_cast<double>(date.day_of_year());

      double seasonal_air = params.air_mean + site_air_offset -
                            params.air_amplitude * std::cos(kTwoPi * (doy - params.air_phase_day) /
                                                            kYearDays);
      air_noise = params.air_noise_rho * air_noise + innovation_sd * rng.normal();
      double air = seasonal_air + air_noise;

      cloud = params.cloud_mean + params.cloud_persistence * (cloud - params.cloud_mean) +
              params.cloud_noise_sd * rng.normal();
      cloud = std::clamp(cloud, 0.0, 1.0);

      // peak at the antipode of the coldest day
      double shape = std::cos(kTwoPi * (doy - params.air_phase_day - kYearDays / 2.0) / kYearDays);
      double clear_sky = params.solar_max * site_solar_scale *
                         (1.0 - params.solar_seasonal_amplitude * (1.0 - shape) / 2.0);
      double solar = clear_sky * (1.0 - kSolarCloudDimming * cloud);

      double rain = 0.0;
      double u = rng.uniform01();
      double mag = rng.uniform01();
      if (u < params.rain_rate) {
        rain = -params.rain_scale * std::log(1.0 - mag);
      }

      ground += kGroundwaterRate * (air + site_soil_offset - ground);
      subsurface += kSubsurfaceRate * (air + site_soil_offset - subsurface);
      double pet = std::max(0.0, 0.0008 * solar + 0.04 * std::max(air, 0.0));

      Sample s;
      s.site_id = site;
      s.date = date;
      s.add_feature("rainfall", rain, unit_of("rainfall"));
      s.add_feature("air_temperature", air, unit_of("air_temperature"));
      s.add_feature("solar_radiation", solar, unit_of("solar_radiation"));
      s.add_feature("cloud_cover", cloud, unit_of("cloud_cover"));
      s.add_feature("groundwater_temperature", ground, unit_of("groundwater_temperature"));
      s.add_feature("subsurface_temperature", subsurface, unit_of("subsurface_temperature"));
      s.add_feature("potential_evapotranspiration", pet,
                    unit_of("potential_evapotranspiration"));
      ds.add(std::move(s));
    }
  }
  return ds;
}

Dataset simulate_stream_temperature(const Dataset& drivers, const SimParams& params) {
  params.validate();
  Dataset out = drivers;
  double k = params.relaxation_rate;

  for (const auto& site : out.sites()) {
    double water = std::max(0.0, params.initial_temp);
    for (std::size_t idx : out.site_indices(site)) {
      const Sample& s = out.samples()[idx];
      out.set_simulated_label(idx, water);

      double vals[3];
      const char* needed[3] = {"air_temperature", "solar_radiation", "cloud_cover"};
      for (int i = 0; i < 3; ++i) {
        const Feature* f = s.find_feature(needed[i]);
        if (!f) {
          throw std::invalid_argument("sample (" + s.site_id + ", " + s.date.iso() +
                                      ") is missing required driver '" + needed[i] + "'");
        }
        vals[i] = f->value;
      }
      double t_eq = params.eq_intercept + params.eq_air_coeff * vals[0] +
                    params.eq_solar_coeff * vals[1] + params.eq_cloud_coeff * vals[2];
      water = std::max(0.0, water + k * (t_eq - water));
    }
  }
  return out;
}

Dataset perturb_to_observations(const Dataset& simulated, double bias, double noise_sd,
                                std::uint64_t seed) {
  if (noise_sd < 0.0) throw std::invalid_argument("noise_sd must be non-negative");
  Dataset out = simulated;

  // site soil-regime level, relative to the cross-site mean; zero when the
  // subsurface feature is absent
  std::map<std::string, double> soil_level;
  double soil_total = 0.0;
  std::size_t soil_count = 0;
  for (const auto& site : out.sites()) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t idx : out.site_indices(site)) {
      if (const Feature* f = out.samples()[idx].find_feature("subsurface_temperature")) {
        sum += f->value;
        ++n;
      }
    }
    if (n > 0) {
      soil_level[site] = sum / static_cast<double>(n);
      soil_total += soil_level[site];
      ++soil_count;
    }
  }
  double soil_mean = soil_count > 0 ? soil_total / static_cast<double>(soil_count) : 0.0;

  for (const auto& site : out.sites()) {
    Rng rng(derive_seed(seed, "obs:" + site));
    double soil_offset = soil_level.count(site) ? soil_level[site] - soil_mean : 0.0;
    double site_bias = bias * (rng.uniform(0.5, 1.5) + kSoilBiasCoupling * soil_offset);
    for (std::size_t idx : out.site_indices(site)) {
      const Sample& s = out.samples()[idx];
      if (!s.simulated_label) {
        throw std::invalid_argument("sample (" + s.site_id + ", " + s.date.iso() +
                                    ") has no simulated label to perturb");
      }
      double y = std::max(0.0, *s.simulated_label + site_bias + noise_sd * rng.normal());
      out.set_observed_label(idx, y);
    }
  }
  return out;
}

Dataset make_benchmark(const BenchmarkSpec& spec) {
  std::vector<std::string> sites;
  sites.reserve(static_cast<std::size_t>(spec.n_sites));
  for (int i = 1; i <= spec.n_sites; ++i) sites.push_back("s" + std::to_string(i));
  Dataset drivers = generate_weather(sites, spec.days, spec.weather);
  Dataset sim = simulate_stream_temperature(drivers, spec.sim);
  return perturb_to_observations(sim, spec.obs_bias, spec.obs_noise_sd, spec.obs_seed);
}

}  // namespace freeml
