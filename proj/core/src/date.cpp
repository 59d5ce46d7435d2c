#include "freeml/date.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace freeml {

namespace {

using days = std::chrono::days;
using sys_days = std::chrono::sys_days;

std::chrono::year_month_day ymd_of(std::int32_t serial) {
  return std::chrono::year_month_day{sys_days{days{serial}}};
}

const char* kMonthNames[12] = {"January",   "February", "March",    "April",
                               "May",       "June",     "July",     "August",
                               "September", "October",  "November", "December"};

bool parse_int(std::string_view s, int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

Date Date::parse(std::string_view iso) {
  int y = 0, m = 0, d = 0;
  bool shape_ok = iso.size() == 10 && iso[4] == '-' && iso[7] == '-' &&
                  parse_int(iso.substr(0, 4), y) && parse_int(iso.substr(5, 2), m) &&
                  parse_int(iso.substr(8, 2), d);
  if (!shape_ok) {
    throw std::invalid_argument("malformed date '" + std::string(iso) +
                                "' (expected YYYY-MM-DD)");
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                  std::chrono::day{unsigned(d)}};
  if (!ymd.ok()) {
    throw std::invalid_argument("invalid calendar date '" + std::string(iso) + "'");
  }
  Date out;
  out.serial_ = static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count());
  return out;
}

Date Date::from_serial(std::int32_t days_since_epoch) {
  Date out;
  out.serial_ = days_since_epoch;
  return out;
}

std::string Date::iso() const {
  auto ymd = ymd_of(serial_);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()));
  return buf;
}

std::string Date::human() const {
  auto ymd = ymd_of(serial_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s %u, %d", kMonthNames[unsigned(ymd.month()) - 1],
                unsigned(ymd.day()), int(ymd.year()));
  return buf;
}

int Date::year() const { return int(ymd_of(serial_).year()); }
unsigned Date::month() const { return unsigned(ymd_of(serial_).month()); }
unsigned Date::day() const { return unsigned(ymd_of(serial_).day()); }

int Date::day_of_year() const {
  auto ymd = ymd_of(serial_);
  sys_days jan1{std::chrono::year_month_day{ymd.year(), std::chrono::month{1},
                                            std::chrono::day{1}}};
  return static_cast<int>((sys_days{days{serial_}} - jan1).count()) + 1;
}

}  // namespace freeml
