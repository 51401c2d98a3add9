#include <set>

#include <gtest/gtest.h>

#include "pfotgn/common.hpp"
#include "test_util.hpp"

namespace pfotgn {
namespace {

using testing::ymd;

TEST(Dates, IsoRoundTrip) {
  const Date d = parse_iso_date("2021-02-28");
  EXPECT_EQ(to_iso_string(d), "2021-02-28");
  EXPECT_EQ(day_of(start_of(d) + 86399), d);
  EXPECT_EQ(day_of(start_of(d) + 86400), d + std::chrono::days{1});
}

TEST(Dates, RejectsMalformed) {
  EXPECT_THROW(parse_iso_date("2021-2-28"), ParseError);
  EXPECT_THROW(parse_iso_date("2021-02-30"), ParseError);
  EXPECT_THROW(parse_iso_date("20210228xx"), ParseError);
}

TEST(Dates, NegativeTimestampsFloor) {
  EXPECT_EQ(day_of(-1), ymd(1969, 12, 31));
  EXPECT_EQ(start_of(ymd(1970, 1, 1)), 0);
}

TEST(Dates, AddMonthsClampsDay) {
  EXPECT_EQ(add_months(ymd(2021, 1, 31), 1), ymd(2021, 2, 28));
  EXPECT_EQ(add_months(ymd(2020, 1, 31), 1), ymd(2020, 2, 29));
  EXPECT_EQ(add_months(ymd(2021, 11, 15), 3), ymd(2022, 2, 15));
  EXPECT_EQ(add_months(ymd(2021, 3, 31), -1), ymd(2021, 2, 28));
}

TEST(Dates, WeekdayCalendar) {
  EXPECT_TRUE(is_weekday(ymd(2021, 1, 4)));    // Monday
  EXPECT_FALSE(is_weekday(ymd(2021, 1, 9)));   // Saturday
  EXPECT_FALSE(is_weekday(ymd(2021, 1, 10)));  // Sunday
}

TEST(Seeds, LabelAndCoordinatesSeparateStreams) {
  std::set<std::uint64_t> seen;
  for (const char* label : {"a", "b", "train", "eval"}) {
    for (std::uint64_t a = 0; a < 5; ++a) {
      for (std::uint64_t b = 0; b < 5; ++b) seen.insert(derive_seed(42, label, a, b));
    }
  }
  EXPECT_EQ(seen.size(), 4u * 5u * 5u);
  EXPECT_EQ(derive_seed(1, "x", 2, 3), derive_seed(1, "x", 2, 3));
  EXPECT_NE(derive_seed(1, "x", 2, 3), derive_seed(2, "x", 2, 3));
}

TEST(Sampling, WithoutReplacementIsDistinctAndCapped) {
  std::vector<int> pool{1, 2, 3, 4, 5, 6, 7};
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng = make_rng(s, "test");
    const auto draw = sample_without_replacement(std::span<const int>(pool), 4, rng);
    ASSERT_EQ(draw.size(), 4u);
    EXPECT_EQ(std::set<int>(draw.begin(), draw.end()).size(), 4u);
  }
  Rng rng = make_rng(0, "test");
  EXPECT_EQ(sample_without_replacement(std::span<const int>(pool), 10, rng).size(), pool.size());
}

TEST(Sampling, UniformOverPositions) {
  // Each element should appear first about 1/n of the time.
  std::vector<int> pool{0, 1, 2, 3};
  std::vector<int> first(4, 0);
  Rng rng = make_rng(9, "uniform");
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    ++first[sample_without_replacement(std::span<const int>(pool), 2, rng)[0]];
  }
  for (int c : first) EXPECT_NEAR(c / static_cast<double>(trials), 0.25, 0.01);
}

TEST(Format, TwelveSignificantDigits) {
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333333");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(123456789012345.0), "1.23456789012e+14");
}

}  // namespace
}  // namespace pfotgn
