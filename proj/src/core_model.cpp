#include "tptkit/core_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "tptkit/error.hpp"
#include "tptkit/rng.hpp"

namespace tptkit {

namespace chr = std::chrono;

namespace {

int parse_int(std::string_view s, std::size_t pos, std::size_t len,
              std::string_view whole) {
  if (pos + len > s.size()) {
    throw InputError("malformed timestamp '" + std::string(whole) + "'");
  }
  int v = 0;
  auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
  if (ec != std::errc() || p != s.data() + pos + len) {
    throw InputError("malformed timestamp '" + std::string(whole) + "'");
  }
  return v;
}

constexpr std::array<int, 12> kLeapMonthStart = {0,   31,  60,  91,  121, 152,
                                                 182, 213, 244, 274, 305, 335};

} // namespace

bool is_leap_year(int year) {
  return chr::year(year).is_leap();
}

int days_in_year(int year) { return is_leap_year(year) ? 366 : 365; }

TimePoint make_time(int year, unsigned month, unsigned day, int hour,
                    int minute) {
  const chr::year_month_day ymd{chr::year(year), chr::month(month),
                                chr::day(day)};
  if (!ymd.ok()) {
    throw RangeError("invalid date " + std::to_string(year) + "-" +
                     std::to_string(month) + "-" + std::to_string(day));
  }
  return chr::time_point_cast<Minutes>(chr::sys_days(ymd)) +
         chr::hours(hour) + Minutes(minute);
}

TimePoint parse_timestamp(std::string_view text) {
  std::string_view s = text;
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' ||
      (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    throw InputError("malformed timestamp '" + std::string(text) + "'");
  }
  const int y = parse_int(s, 0, 4, text);
  const int mo = parse_int(s, 5, 2, text);
  const int d = parse_int(s, 8, 2, text);
  const int h = parse_int(s, 11, 2, text);
  const int mi = parse_int(s, 14, 2, text);
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    if (parse_int(s, pos + 1, 2, text) != 0) {
      throw InputError("sub-minute timestamp '" + std::string(text) + "'");
    }
    pos += 3;
  }
  const std::string_view zone = s.substr(pos);
  if (!(zone.empty() || zone == "Z" || zone == "z" || zone == "+00:00" ||
        zone == "-00:00")) {
    throw InputError("non-UTC timestamp '" + std::string(text) + "'");
  }
  if (h > 23 || mi > 59) {
    throw InputError("malformed timestamp '" + std::string(text) + "'");
  }
  return make_time(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h,
                   mi);
}

std::string format_timestamp(TimePoint t) {
  const auto day = chr::floor<chr::days>(t);
  const chr::year_month_day ymd{day};
  const auto tod = t - day;
  const int h = static_cast<int>(chr::duration_cast<chr::hours>(tod).count());
  const int m = static_cast<int>(tod.count() % 60);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:00Z",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), h, m);
  return buf;
}

int month_day_slot(unsigned month, unsigned day) {
  if (!chr::year_month_day{chr::year(2000), chr::month(month), chr::day(day)}.ok()) {
    throw RangeError("invalid month/day");
  }
  return kLeapMonthStart[month - 1] + static_cast<int>(day) - 1;
}

std::pair<unsigned, unsigned> slot_month_day(int slot) {
  if (slot < 0 || slot >= 366) {
    throw RangeError("month-day slot out of range");
  }
  unsigned m = 12;
  while (kLeapMonthStart[m - 1] > slot) {
    --m;
  }
  return {m, static_cast<unsigned>(slot - kLeapMonthStart[m - 1] + 1)};
}

TimeGrid::TimeGrid(TimePoint start, int step_minutes, std::int64_t count)
    : start_(start), step_(step_minutes), count_(count) {
  if (step_minutes < 1 || 1440 % step_minutes != 0) {
    throw ConfigError("time step must divide 1440 minutes, got " +
                      std::to_string(step_minutes));
  }
  if (count < 1) {
    throw ConfigError("time grid needs at least one sample");
  }
}

TimePoint TimeGrid::time_at(std::int64_t index) const {
  if (index < 0 || index >= count_) {
    throw RangeError("time index " + std::to_string(index) +
                     " outside [0, " + std::to_string(count_) + ")");
  }
  return start_ + Minutes(index * step_);
}

std::optional<std::int64_t> TimeGrid::index_of(TimePoint t) const {
  const auto delta = (t - start_).count();
  if (delta < 0 || delta % step_ != 0) {
    return std::nullopt;
  }
  const std::int64_t idx = delta / step_;
  if (idx >= count_) {
    return std::nullopt;
  }
  return idx;
}

CalendarTuple TimeGrid::to_calendar(std::int64_t index) const {
  const TimePoint t = time_at(index);
  const auto day = chr::floor<chr::days>(t);
  const chr::year_month_day ymd{day};
  const chr::sys_days jan1{ymd.year() / chr::January / 1};
  const auto tod = (t - day).count();
  return {static_cast<int>(ymd.year()),
          static_cast<int>((day - jan1).count()) + 1,
          static_cast<int>(tod / 60), static_cast<int>(tod % 60)};
}

std::int64_t TimeGrid::from_calendar(const CalendarTuple& c) const {
  if (c.day_of_year < 1 || c.day_of_year > days_in_year(c.year)) {
    throw RangeError("day of year out of range");
  }
  const chr::sys_days jan1{chr::year(c.year) / chr::January / 1};
  const TimePoint t = chr::time_point_cast<Minutes>(jan1) +
                      chr::days(c.day_of_year - 1) + chr::hours(c.hour) +
                      Minutes(c.minute);
  auto idx = index_of(t);
  if (!idx) {
    throw RangeError("calendar tuple not on the time grid");
  }
  return *idx;
}

std::pair<int, int> TimeGrid::clim_slot(std::int64_t index) const {
  const TimePoint t = time_at(index);
  const auto day = chr::floor<chr::days>(t);
  const chr::year_month_day ymd{day};
  const auto tod = (t - day).count();
  return {month_day_slot(static_cast<unsigned>(ymd.month()),
                         static_cast<unsigned>(ymd.day())),
          static_cast<int>(tod / step_)};
}

int TimeGrid::month_of(std::int64_t index) const {
  const chr::year_month_day ymd{chr::floor<chr::days>(time_at(index))};
  return static_cast<int>(static_cast<unsigned>(ymd.month()));
}

ObservationSeries ObservationSeries::make(std::string id,
                                          std::vector<double> values) {
  ObservationSeries s;
  s.station_id = std::move(id);
  s.flags.assign(values.size(), SampleFlag::raw);
  s.values = std::move(values);
  return s;
}

const char* to_string(SplitLabel label) {
  switch (label) {
  case SplitLabel::train:
    return "train";
  case SplitLabel::val:
    return "val";
  case SplitLabel::test:
    return "test";
  }
  return "?";
}

std::size_t Dataset::station_index(std::string_view id) const {
  for (std::size_t i = 0; i < stations.size(); ++i) {
    if (stations[i].id == id) {
      return i;
    }
  }
  throw LookupError("unknown station '" + std::string(id) + "'");
}

namespace {

void check_fractions(const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0) {
    throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    perm[static_cast<std::size_t>(i)] = i;
  }
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

} // namespace

std::vector<SplitLabel> split_indices(std::int64_t count,
                                      const SplitFractions& fractions,
                                      std::uint64_t seed) {
  check_fractions(fractions);
  const auto n_train =
      static_cast<std::int64_t>(std::llround(fractions.train * count));
  const auto n_val = std::min<std::int64_t>(
      count - n_train,
      static_cast<std::int64_t>(std::llround(fractions.val * count)));
  std::vector<SplitLabel> labels(static_cast<std::size_t>(count),
                                 SplitLabel::test);
  const auto perm = permutation(count, seed);
  for (std::int64_t k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(perm[static_cast<std::size_t>(k)]);
    labels[i] = k < n_train            ? SplitLabel::train
                : k < n_train + n_val ? SplitLabel::val
                                       : SplitLabel::test;
  }
  return labels;
}

Dataset split_dataset(Dataset d, const SplitFractions& fractions,
                      std::uint64_t seed) {
  d.split = split_indices(d.grid.count(), fractions, seed);
  return d;
}

std::vector<SplitLabel> split_holdout_year(const TimeGrid& grid, int year,
                                           const SplitFractions& fractions,
                                           std::uint64_t seed) {
  check_fractions(fractions);
  std::vector<std::int64_t> seen;
  std::vector<SplitLabel> labels(static_cast<std::size_t>(grid.count()),
                                 SplitLabel::test);
  for (std::int64_t i = 0; i < grid.count(); ++i) {
    if (grid.to_calendar(i).year != year) {
      seen.push_back(i);
    }
  }
  const double tv = fractions.train + fractions.val;
  if (tv <= 0) {
    throw ConfigError("holdout split needs a positive train fraction");
  }
  const auto sub = split_indices(static_cast<std::int64_t>(seen.size()),
                                 {fractions.train / tv, fractions.val / tv, 0.0},
                                 seed);
  for (std::size_t k = 0; k < seen.size(); ++k) {
    labels[static_cast<std::size_t>(seen[k])] = sub[k];
  }
  return labels;
}

} // namespace tptkit
