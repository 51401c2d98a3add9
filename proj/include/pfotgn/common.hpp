#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace pfotgn {

// Seconds since the Unix epoch.
using Timestamp = std::int64_t;
using Date = std::chrono::sys_days;

using UserIndex = std::uint32_t;
using ItemIndex = std::uint32_t;
using NodeIndex = std::uint32_t;

inline constexpr Timestamp kSecondsPerDay = 86400;

// Error hierarchy. Each failure mode named by the module contracts has its
// own type so callers can decide whether to exclude, retry or abort.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientHistoryError : public Error {
 public:
  using Error::Error;
};

class MissingHistoryError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegenerateVolatilityError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class OrderingError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class EmptySplitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Calendar helpers. All timestamps are interpreted in UTC.
// ---------------------------------------------------------------------------

Date day_of(Timestamp t);
Timestamp start_of(Date d);
Date parse_iso_date(std::string_view text);
std::string to_iso_string(Date d);
bool is_weekday(Date d);

// Calendar-month addition; the day of month is clamped to the target
// month's length (Jan 31 + 1 month = Feb 28/29).
Date add_months(Date d, int months);

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

using Rng = boost::random::mt19937_64;

// Derives an independent stream seed from a global seed, a purpose label and
// up to two integer coordinates (epoch, interaction index, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::uint64_t a = 0, std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view label,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(seed, label, a, b));
}

// Uniform sample without replacement of up to `count` elements (partial
// Fisher-Yates over a copy of `pool`). Result is in draw order.
template <typename T>
std::vector<T> sample_without_replacement(std::span<const T> pool,
                                          std::size_t count, Rng& rng) {
  std::vector<T> work(pool.begin(), pool.end());
  const std::size_t take = std::min(count, work.size());
  for (std::size_t i = 0; i < take; ++i) {
    boost::random::uniform_int_distribution<std::size_t> pick(i, work.size() - 1);
    std::swap(work[i], work[pick(rng)]);
  }
  work.resize(take);
  return work;
}

// Fixed 12-significant-digit rendering used by every report and log.
std::string format_number(double value);

}  // namespace pfotgn
