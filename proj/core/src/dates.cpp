#include "nowcast/dates.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

bool parse_uint(std::string_view s, unsigned& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Date Date::from_ymd(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) {
    throw ParseError("invalid calendar date " + std::to_string(year) + "-" + std::to_string(month) +
                     "-" + std::to_string(day));
  }
  return Date(static_cast<int>(sys_days{ymd}.time_since_epoch().count()));
}

Date Date::parse(std::string_view iso) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
    throw ParseError("expected YYYY-MM-DD date, got '" + std::string(iso) + "'");
  }
  unsigned y = 0, m = 0, d = 0;
  if (!parse_uint(iso.substr(0, 4), y) || !parse_uint(iso.substr(5, 2), m) ||
      !parse_uint(iso.substr(8, 2), d)) {
    throw ParseError("expected YYYY-MM-DD date, got '" + std::string(iso) + "'");
  }
  return from_ymd(static_cast<int>(y), m, d);
}

std::string Date::iso() const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{std::chrono::days{days_}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int Date::weekday() const {
  using namespace std::chrono;
  const std::chrono::weekday wd{sys_days{std::chrono::days{days_}}};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

}  // namespace nowcast
