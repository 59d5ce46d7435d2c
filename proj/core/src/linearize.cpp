#include "freeml/linearize.hpp"

#include <cmath>
#include <cstdio>

namespace freeml {

nlohmann::json LinearizedRecord::to_json() const {
  nlohmann::json pairs_json = nlohmann::json::array();
  for (const auto& p : pairs) {
    pairs_json.push_back(nlohmann::json::array({p.key, p.value}));
  }
  return nlohmann::json{{"sample", {site_id, date.iso()}}, {"pairs", pairs_json}};
}

std::string render_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s.size() > 3 && s.compare(s.size() - 3, 3, ".00") == 0) {
    s.erase(s.size() - 3);
  }
  if (s == "-0") s = "0";
  return s;
}

std::string display_key(std::string_view feature_name) {
  std::string out(feature_name);
  for (char& c : out) {
    if (c == '_') c = ' ';
  }
  return out;
}

namespace {

void append_feature_pairs(const Sample& sample,
                          const std::optional<std::set<std::string>>& subset,
                          std::vector<LinearizedPair>& pairs) {
  for (const auto& f : sample.features) {
    if (subset && !subset->count(f.name)) continue;
    pairs.push_back(LinearizedPair{display_key(f.name), render_number(f.value), f.unit});
  }
}

}  // namespace

LinearizedRecord linearize(const Sample& sample,
                           const std::optional<std::set<std::string>>& feature_subset) {
  LinearizedRecord rec;
  rec.site_id = sample.site_id;
  rec.date = sample.date;
  rec.pairs.push_back(LinearizedPair{"date", sample.date.iso(), ""});
  append_feature_pairs(sample, feature_subset, rec.pairs);
  return rec;
}

LinearizedRecord linearize_with_auxiliary(const Sample& sample,
                                          std::span<const AuxObservation> aux,
                                          std::string_view target_name,
                                          const std::optional<std::set<std::string>>& feature_subset) {
  LinearizedRecord rec;
  rec.site_id = sample.site_id;
  rec.date = sample.date;

  std::optional<Date> block_date;
  for (const auto& a : aux) {
    if (a.date >= sample.date) {
      throw std::invalid_argument("auxiliary observation dated " + a.date.iso() +
                                  " is not before sample date " + sample.date.iso());
    }
    if (!block_date || *block_date != a.date) {
      rec.pairs.push_back(LinearizedPair{"date", a.date.iso(), ""});
      block_date = a.date;
    }
    std::string key = "observed " + std::string(target_name) +
                      (a.relation == AuxRelation::neighbor ? " at neighbor site " : " at site ") +
                      a.source_site;
    rec.pairs.push_back(LinearizedPair{std::move(key), render_number(a.value), "degrees Celsius"});
  }

  rec.pairs.push_back(LinearizedPair{"date", sample.date.iso(), ""});
  append_feature_pairs(sample, feature_subset, rec.pairs);
  return rec;
}

}  // namespace freeml
