#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace freeml {

// Calendar date, ISO-8601 (YYYY-MM-DD) everywhere. Internally a day count so
// that "next day" and spans are integer arithmetic.
class Date {
 public:
  Date() = default;

  // Strict ISO-8601 parse; rejects impossible dates (2021-02-30).
  static Date parse(std::string_view iso);
  static Date from_serial(std::int32_t days_since_epoch);

  std::string iso() const;
  // "December 4, 2006" -- used by the description templates.
  std::string human() const;

  std::int32_t serial() const { return serial_; }
  int year() const;
  unsigned month() const;   // 1..12
  unsigned day() const;     // 1..31
  int day_of_year() const;  // 1..366

  Date plus_days(std::int32_t n) const { return from_serial(serial_ + n); }

  auto operator<=>(const Date&) const = default;

 private:
  std::int32_t serial_ = 0;  // days since 1970-01-01
};

}  // namespace freeml
