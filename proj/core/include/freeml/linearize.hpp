#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "freeml/core.hpp"

namespace freeml {

struct LinearizedPair {
  std::string key;
  std::string value;
  std::string unit;  // metadata for the description templates; not serialized

  bool operator==(const LinearizedPair&) const = default;
};

// Ordered key/value sequence for one sample. Pair order is exactly the
// construction order of linearize / linearize_with_auxiliary.
struct LinearizedRecord {
  std::string site_id;
  Date date;
  std::vector<LinearizedPair> pairs;

  // {"sample": [site, date], "pairs": [[k, v], ...]}
  nlohmann::json to_json() const;

  bool operator==(const LinearizedRecord&) const = default;
};

enum class AuxRelation { current_site, neighbor };

// A previously collected target observation injected into the description.
struct AuxObservation {
  std::string source_site;
  Date date;  // strictly before the target sample's date
  double value = 0.0;
  AuxRelation relation = AuxRelation::current_site;
};

// Canonical number rendering: fixed-point with two fractional digits,
// ".00" dropped for integral values ("0", "151.14", "-3.36").
std::string render_number(double v);

// "solar_radiation" -> "solar radiation"
std::string display_key(std::string_view feature_name);

// [date: t] then one [name: value] pair per present feature in stored order.
// If feature_subset is given, features outside it are dropped; names in the
// subset that the sample lacks are skipped silently.
LinearizedRecord linearize(const Sample& sample,
                           const std::optional<std::set<std::string>>& feature_subset = std::nullopt);

// Eq-style auxiliary form: a leading [date: t-1] block with one observation
// pair per entry (current site first, then neighbors in canonical order; a
// fresh date pair is emitted whenever the observation date changes), then the
// plain linearization. Empty aux reduces to linearize().
LinearizedRecord linearize_with_auxiliary(
    const Sample& sample, std::span<const AuxObservation> aux,
    std::string_view target_name = "water temperature",
    const std::optional<std::set<std::string>>& feature_subset = std::nullopt);

}  // namespace freeml
