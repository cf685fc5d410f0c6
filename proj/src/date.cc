#include "boolgen/date.h"

#include <charconv>

#include <fmt/format.h>

#include "boolgen/error.h"

namespace boolgen {

namespace {

bool parse_int(std::string_view text, int* out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), *out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day)
    : ymd_(std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}) {
  if (!ymd_.ok()) {
    throw Error(fmt::format("invalid calendar date {:04}-{:02}-{:02}", year, month, day));
  }
}

bool Date::try_parse(std::string_view text, Date* out) {
  if (text.size() != 10) return false;
  const char sep = text[4];
  if ((sep != '-' && sep != '/') || text[7] != sep) return false;
  int y = 0, m = 0, d = 0;
  if (!parse_int(text.substr(0, 4), &y) || !parse_int(text.substr(5, 2), &m) ||
      !parse_int(text.substr(8, 2), &d)) {
    return false;
  }
  if (m < 1 || d < 1) return false;
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                  std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return false;
  out->ymd_ = ymd;
  return true;
}

Date Date::parse(std::string_view text) {
  Date d;
  if (!try_parse(text, &d)) {
    throw Error(fmt::format("invalid date '{}' (expected YYYY-MM-DD)", text));
  }
  return d;
}

std::string Date::iso() const { return fmt::format("{:04}-{:02}-{:02}", year(), month(), day()); }

std::string Date::slashed() const {
  return fmt::format("{:04}/{:02}/{:02}", year(), month(), day());
}

}  // namespace boolgen
