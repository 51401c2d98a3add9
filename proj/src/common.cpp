#include "pfotgn/common.hpp"

#include <charconv>

#include <fmt/core.h>

namespace pfotgn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Timestamp floor_div(Timestamp a, Timestamp b) {
  Timestamp q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

Date day_of(Timestamp t) {
  return Date{std::chrono::days{floor_div(t, kSecondsPerDay)}};
}

Timestamp start_of(Date d) {
  return static_cast<Timestamp>(d.time_since_epoch().count()) * kSecondsPerDay;
}

Date parse_iso_date(std::string_view text) {
  auto fail = [&]() -> Date {
    throw ParseError("malformed ISO date '" + std::string(text) + "'");
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return fail();
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse = [&](std::string_view part, auto& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc() && ptr == part.data() + part.size();
  };
  if (!parse(text.substr(0, 4), y) || !parse(text.substr(5, 2), m) ||
      !parse(text.substr(8, 2), d)) {
    return fail();
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                  std::chrono::day{d}};
  if (!ymd.ok()) return fail();
  return Date{ymd};
}

std::string to_iso_string(Date d) {
  std::chrono::year_month_day ymd{d};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

bool is_weekday(Date d) {
  std::chrono::weekday wd{d};
  return wd != std::chrono::Saturday && wd != std::chrono::Sunday;
}

Date add_months(Date d, int months) {
  std::chrono::year_month_day ymd{d};
  auto shifted = std::chrono::year_month{ymd.year(), ymd.month()} +
                 std::chrono::months{months};
  auto last = std::chrono::year_month_day_last{
      shifted.year(), std::chrono::month_day_last{shifted.month()}};
  auto day = std::min(ymd.day(), last.day());
  return Date{std::chrono::year_month_day{shifted.year(), shifted.month(), day}};
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a(label));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return h;
}

std::string format_number(double value) {
  if (value == 0.0) value = 0.0;  // fold -0
  return fmt::format("{:.12g}", value);
}

}  // namespace pfotgn
