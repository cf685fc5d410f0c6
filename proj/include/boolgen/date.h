#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>

namespace boolgen {

// Calendar date with day precision. Accepts YYYY-MM-DD and YYYY/MM/DD.
class Date {
 public:
  Date() = default;
  Date(int year, unsigned month, unsigned day);

  static Date parse(std::string_view text);
  static bool try_parse(std::string_view text, Date* out);

  int year() const { return static_cast<int>(ymd_.year()); }
  unsigned month() const { return static_cast<unsigned>(ymd_.month()); }
  unsigned day() const { return static_cast<unsigned>(ymd_.day()); }

  // YYYY-MM-DD
  std::string iso() const;
  // YYYY/MM/DD, the form Entrez expects for mindate/maxdate.
  std::string slashed() const;

  friend bool operator==(const Date&, const Date&) = default;
  friend auto operator<=>(const Date& a, const Date& b) {
    return std::chrono::sys_days(a.ymd_) <=> std::chrono::sys_days(b.ymd_);
  }

 private:
  std::chrono::year_month_day ymd_{std::chrono::year{1970}, std::chrono::month{1},
                                   std::chrono::day{1}};
};

}  // namespace boolgen
