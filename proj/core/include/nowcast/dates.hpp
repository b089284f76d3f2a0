#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace nowcast {

// A calendar day stored as the number of days since 1970-01-01. ISO-8601
// (YYYY-MM-DD) at every text boundary.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(int days_since_epoch) : days_(days_since_epoch) {}

  static Date parse(std::string_view iso);
  static Date from_ymd(int year, unsigned month, unsigned day);

  std::string iso() const;
  constexpr int days() const { return days_; }

  // 0 = Monday, ..., 6 = Sunday.
  int weekday() const;

  friend constexpr auto operator<=>(Date, Date) = default;
  friend constexpr bool operator==(Date, Date) = default;
  friend constexpr Date operator+(Date d, int n) { return Date(d.days_ + n); }
  friend constexpr Date operator-(Date d, int n) { return Date(d.days_ - n); }
  friend constexpr int operator-(Date a, Date b) { return a.days_ - b.days_; }

 private:
  int days_ = 0;
};

inline constexpr const char* kWeekdayNames[7] = {"Monday", "Tuesday", "Wednesday", "Thursday",
                                                 "Friday", "Saturday", "Sunday"};

}  // namespace nowcast
