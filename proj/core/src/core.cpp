#include "freeml/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace freeml {

namespace {

std::string render_csv_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

double parse_cell_double(std::string_view cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v)) {
    throw IngestError("non-numeric value '" + std::string(cell) + "' in column '" + column +
                      "' at row " + std::to_string(row));
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

const Feature* Sample::find_feature(std::string_view name) const {
  for (const auto& f : features) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

void Sample::add_feature(std::string name, double value, std::string unit) {
  if (name.empty()) throw std::invalid_argument("feature name must be nonempty");
  if (!std::isfinite(value)) {
    throw std::invalid_argument("feature '" + name + "' has non-finite value");
  }
  if (find_feature(name) != nullptr) {
    throw std::invalid_argument("duplicate feature '" + name + "'");
  }
  features.push_back(Feature{std::move(name), value, std::move(unit)});
}

void Dataset::add(Sample s) {
  auto& dates = by_site_[s.site_id];
  if (!dates.empty()) {
    if (dates.count(s.date)) {
      throw IngestError("duplicate sample for (" + s.site_id + ", " + s.date.iso() + ")");
    }
    Date expected = dates.rbegin()->first.plus_days(1);
    if (s.date != expected) {
      throw IngestError("non-contiguous dates for site " + s.site_id + ": expected " +
                        expected.iso() + ", got " + s.date.iso());
    }
  }
  site_registry_.insert(s.site_id);
  dates.emplace(s.date, samples_.size());
  samples_.push_back(std::move(s));
}

std::vector<std::string> Dataset::sites() const {
  return {site_registry_.begin(), site_registry_.end()};
}

std::optional<std::pair<Date, Date>> Dataset::date_range() const {
  std::optional<std::pair<Date, Date>> range;
  for (const auto& [site, dates] : by_site_) {
    if (dates.empty()) continue;
    Date lo = dates.begin()->first;
    Date hi = dates.rbegin()->first;
    if (!range) {
      range = {lo, hi};
    } else {
      range->first = std::min(range->first, lo);
      range->second = std::max(range->second, hi);
    }
  }
  return range;
}

const Sample* Dataset::find(std::string_view site_id, Date date) const {
  auto it = by_site_.find(std::string(site_id));
  if (it == by_site_.end()) return nullptr;
  auto jt = it->second.find(date);
  if (jt == it->second.end()) return nullptr;
  return &samples_[jt->second];
}

std::vector<std::size_t> Dataset::site_indices(const std::string& site_id) const {
  std::vector<std::size_t> out;
  auto bs = by_site_.find(site_id);
  if (bs == by_site_.end()) return out;
  out.reserve(bs->second.size());
  for (const auto& [d, idx] : bs->second) out.push_back(idx);
  return out;
}

std::size_t Dataset::observed_count() const {
  std::size_t n = 0;
  for (const auto& s : samples_) n += s.observed_label.has_value();
  return n;
}

std::size_t Dataset::simulated_count() const {
  std::size_t n = 0;
  for (const auto& s : samples_) n += s.simulated_label.has_value();
  return n;
}

void Dataset::set_observed_label(std::size_t index, std::optional<double> v) {
  samples_.at(index).observed_label = v;
}

void Dataset::set_simulated_label(std::size_t index, std::optional<double> v) {
  samples_.at(index).simulated_label = v;
}

std::uint64_t Dataset::content_hash() const {
  HashStream hs;
  for (const auto& s : samples_) {
    hs.field(s.site_id).field(s.date.iso());
    for (const auto& f : s.features) {
      hs.field(f.name).field(render_csv_double(f.value)).field(f.unit);
    }
    hs.field(s.observed_label ? render_csv_double(*s.observed_label) : "");
    hs.field(s.simulated_label ? render_csv_double(*s.simulated_label) : "");
  }
  return hs.digest();
}

SiteGraph SiteGraph::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open neighbor file " + path.string());
  SiteGraph g;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (row == 1 && cells.size() == 2 && cells[0] == "site_id") continue;  // optional header
    if (cells.size() != 2 || cells[0].empty() || cells[1].empty()) {
      throw IngestError("malformed neighbor row " + std::to_string(row));
    }
    g.neighbors[cells[0]].push_back(cells[1]);
  }
  for (auto& [site, list] : g.neighbors) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return g;
}

void SiteGraph::validate(const Dataset& ds) const {
  auto sites = ds.sites();
  auto exists = [&](const std::string& s) {
    return std::binary_search(sites.begin(), sites.end(), s);
  };
  for (const auto& [site, list] : neighbors) {
    if (!exists(site)) throw std::invalid_argument("graph site '" + site + "' not in dataset");
    for (const auto& n : list) {
      if (n == site) throw std::invalid_argument("self-loop at site '" + site + "'");
      if (!exists(n)) throw std::invalid_argument("neighbor '" + n + "' not in dataset");
    }
  }
}

std::span<const std::string> SiteGraph::of(const std::string& site_id) const {
  auto it = neighbors.find(site_id);
  if (it == neighbors.end()) return {};
  return it->second;
}

void SplitSpec::validate(const Dataset& ds) const {
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw std::invalid_argument("label_fraction must lie in (0, 1]");
  }
  auto range = ds.date_range();
  if (!range || train_end < range->first || train_end > range->second) {
    throw std::invalid_argument("train_end outside dataset date range");
  }
}

const std::map<std::string, std::string>& default_units() {
  static const std::map<std::string, std::string> kUnits = {
      {"rainfall", "millimeters"},
      {"air_temperature", "degrees Celsius"},
      {"solar_radiation", "watts per square meter"},
      {"cloud_cover", ""},
      {"groundwater_temperature", "degrees Celsius"},
      {"subsurface_temperature", "degrees Celsius"},
      {"potential_evapotranspiration", "millimeters"},
  };
  return kUnits;
}

Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::vector<std::string>& schema,
                     const std::map<std::string, std::string>& units) {
  std::ifstream in(csv_path);
  if (!in) throw IngestError("cannot open dataset file " + csv_path.string());

  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty dataset file " + csv_path.string());
  auto header = split_csv_line(line);

  auto column_of = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };

  int site_col = column_of("site_id");
  int date_col = column_of("date");
  if (site_col < 0 || date_col < 0) {
    throw IngestError("header must contain site_id and date columns");
  }
  std::vector<int> feature_cols;
  for (const auto& name : schema) {
    int c = column_of(name);
    if (c < 0) throw IngestError("schema column '" + name + "' missing from header");
    feature_cols.push_back(c);
  }
  int obs_col = column_of("observed_label");
  int sim_col = column_of("simulated_label");

  auto unit_of = [&](const std::string& name) -> std::string {
    auto it = units.find(name);
    return it == units.end() ? std::string{} : it->second;
  };

  Dataset ds;
  ds.set_schema(schema);
  std::map<std::string, Date> last_date;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw IngestError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    Sample s;
    s.site_id = cells[site_col];
    if (s.site_id.empty()) throw IngestError("empty site_id at row " + std::to_string(row));
    try {
      s.date = Date::parse(cells[date_col]);
    } catch (const std::invalid_argument& e) {
      throw IngestError(std::string(e.what()) + " at row " + std::to_string(row));
    }

    auto seen = last_date.find(s.site_id);
    if (seen != last_date.end()) {
      Date expected = seen->second.plus_days(1);
      if (s.date == seen->second || ds.find(s.site_id, s.date) != nullptr) {
        throw IngestError("duplicate (" + s.site_id + ", " + s.date.iso() + ") at row " +
                          std::to_string(row));
      }
      if (s.date != expected) {
        throw IngestError("gap at row " + std::to_string(row) + " for site " + s.site_id +
                          ": expected " + expected.iso() + ", got " + s.date.iso());
      }
    }

    for (std::size_t k = 0; k < schema.size(); ++k) {
      const std::string& cell = cells[feature_cols[k]];
      if (cell.empty()) continue;  // absent feature
      s.add_feature(schema[k], parse_cell_double(cell, row, schema[k]), unit_of(schema[k]));
    }
    if (obs_col >= 0 && !cells[obs_col].empty()) {
      s.observed_label = parse_cell_double(cells[obs_col], row, "observed_label");
    }
    if (sim_col >= 0 && !cells[sim_col].empty()) {
      s.simulated_label = parse_cell_double(cells[sim_col], row, "simulated_label");
    }
    last_date[s.site_id] = s.date;
    ds.add(std::move(s));
  }
  return ds;
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IngestError("cannot write " + csv_path.string());
  const auto& schema = ds.schema();
  out << "site_id,date";
  for (const auto& name : schema) out << ',' << name;
  out << ",observed_label,simulated_label\n";
  for (const auto& s : ds.samples()) {
    out << s.site_id << ',' << s.date.iso();
    for (const auto& name : schema) {
      out << ',';
      if (const Feature* f = s.find_feature(name)) out << render_csv_double(f->value);
    }
    out << ',';
    if (s.observed_label) out << render_csv_double(*s.observed_label);
    out << ',';
    if (s.simulated_label) out << render_csv_double(*s.simulated_label);
    out << '\n';
  }
  if (!out) throw IngestError("write failed for " + csv_path.string());
}

Dataset subsample_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.samples()[i].observed_label) labeled.push_back(i);
  }
  auto keep_count =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labeled.size())));
  Rng rng(seed);
  rng.shuffle(labeled);
  std::set<std::size_t> keep(labeled.begin(), labeled.begin() + std::min(keep_count, labeled.size()));

  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.samples()[i].observed_label && !keep.count(i)) {
      out.set_observed_label(i, std::nullopt);
    }
  }
  return out;
}

Dataset filter_sites(const Dataset& ds, const std::vector<std::string>& sites) {
  std::set<std::string> keep(sites.begin(), sites.end());
  Dataset out;
  out.set_schema(ds.schema());
  for (const auto& site : keep) out.register_site(site);
  for (const auto& s : ds.samples()) {
    if (keep.count(s.site_id)) out.add(s);
  }
  return out;
}

std::pair<Dataset, Dataset> split_by_date(const Dataset& ds, Date boundary) {
  auto range = ds.date_range();
  if (!range || boundary < range->first || boundary > range->second) {
    throw std::invalid_argument("split boundary " + boundary.iso() + " outside dataset range");
  }
  Dataset head, tail;
  head.set_schema(ds.schema());
  tail.set_schema(ds.schema());
  for (const auto& site : ds.sites()) {
    head.register_site(site);
    tail.register_site(site);
  }
  for (const auto& s : ds.samples()) {
    (s.date <= boundary ? head : tail).add(s);
  }
  return {std::move(head), std::move(tail)};
}

}  // namespace freeml
