#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace onarch {

// Calendar dates as days since 1970-01-01 (negative allowed).
using DayCount = std::int64_t;

// Howard Hinnant's civil-from-days algorithms.
inline DayCount days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<DayCount>(era) * 146097 + static_cast<DayCount>(doe) -
         719468;
}

inline void civil_from_days(DayCount z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const DayCount era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = yr + (m <= 2);
}

// 0 = Monday ... 6 = Sunday.
inline int weekday(DayCount z) {
  return static_cast<int>(((z % 7) + 10) % 7);  // 1970-01-01 was a Thursday
}

inline DayCount parse_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw std::invalid_argument("bad ISO date: " + s);
  const int y = std::stoi(s.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(s.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(s.substr(8, 2)));
  if (m < 1 || m > 12 || d < 1 || d > 31)
    throw std::invalid_argument("bad ISO date: " + s);
  return days_from_civil(y, m, d);
}

inline std::string format_iso_date(DayCount z) {
  int y;
  unsigned m, d;
  civil_from_days(z, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, m, d);
  return buf;
}

} // namespace onarch
