#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freeml/common.hpp"
#include "freeml/date.hpp"

namespace freeml {

struct Feature {
  std::string name;
  double value = 0.0;
  std::string unit;  // surface text, e.g. "degrees Celsius"; empty if unknown

  bool operator==(const Feature&) const = default;
};

// One (site, date) record. Feature order is insertion order and is preserved
// through every downstream transformation.
struct Sample {
  std::string site_id;
  Date date;
  std::vector<Feature> features;
  std::optional<double> observed_label;   // deg C
  std::optional<double> simulated_label;  // deg C

  const Feature* find_feature(std::string_view name) const;
  // Rejects duplicate names and non-finite values.
  void add_feature(std::string name, double value, std::string unit = "");

  bool operator==(const Sample&) const = default;
};

// Samples keyed by (site, date), kept in insertion (file) order. Per site the
// dates must form a contiguous daily sequence; add() enforces ascending
// one-day steps.
class Dataset {
 public:
  void add(Sample s);
  void register_site(const std::string& site_id) { site_registry_.insert(site_id); }
  void set_schema(std::vector<std::string> names) { schema_ = std::move(names); }

  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<std::string>& schema() const { return schema_; }

  // Sorted site ids (registered sites, including any without samples).
  std::vector<std::string> sites() const;
  std::optional<std::pair<Date, Date>> date_range() const;

  const Sample* find(std::string_view site_id, Date date) const;
  // Indices into samples() for one site, in date order.
  std::vector<std::size_t> site_indices(const std::string& site_id) const;

  std::size_t observed_count() const;
  std::size_t simulated_count() const;

  void set_observed_label(std::size_t index, std::optional<double> v);
  void set_simulated_label(std::size_t index, std::optional<double> v);

  // Canonical content hash over samples in file order.
  std::uint64_t content_hash() const;

  bool operator==(const Dataset& other) const { return samples_ == other.samples_; }

 private:
  std::vector<Sample> samples_;
  std::map<std::string, std::map<Date, std::size_t>> by_site_;
  std::set<std::string> site_registry_;
  std::vector<std::string> schema_;
};

// Directed neighborhoods; lists are sorted lexicographically (canonical order).
struct SiteGraph {
  std::map<std::string, std::vector<std::string>> neighbors;

  // CSV `site_id,neighbor_id`, one edge per row.
  static SiteGraph load_csv(const std::filesystem::path& path);

  // Checks: no self-loops, all endpoints exist in ds.
  void validate(const Dataset& ds) const;

  std::span<const std::string> of(const std::string& site_id) const;
};

struct SplitSpec {
  Date train_end;
  double label_fraction = 1.0;  // in (0, 1]
  std::uint64_t seed = 0;

  void validate(const Dataset& ds) const;
};

// Default unit registry for the synthetic stream task's feature names.
const std::map<std::string, std::string>& default_units();

// CSV ingestion. Header must contain site_id, date and every schema name;
// observed_label / simulated_label columns are optional; unlisted columns are
// ignored. Empty cells mean "absent", never zero.
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::vector<std::string>& schema,
                     const std::map<std::string, std::string>& units = default_units());

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& csv_path);

// Keeps exactly round(fraction * L) of the L observed labels, chosen uniformly
// without replacement; everything else is untouched.
Dataset subsample_labels(const Dataset& ds, double fraction, std::uint64_t seed);

// (samples with date <= boundary, samples after boundary).
std::pair<Dataset, Dataset> split_by_date(const Dataset& ds, Date boundary);

// Samples belonging to the listed sites, in the original order.
Dataset filter_sites(const Dataset& ds, const std::vector<std::string>& sites);

}  // namespace freeml
