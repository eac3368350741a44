#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tptkit {

using Minutes = std::chrono::minutes;
using TimePoint = std::chrono::sys_time<Minutes>;

constexpr double kKelvinOffset = 273.15;
inline double celsius_to_kelvin(double c) { return c + kKelvinOffset; }
inline double kelvin_to_celsius(double k) { return k - kKelvinOffset; }

/// Parses `YYYY-MM-DDTHH:MM[:SS][Z|+00:00]`. Only UTC is accepted and seconds
/// must be zero.
TimePoint parse_timestamp(std::string_view text);
std::string format_timestamp(TimePoint t);

TimePoint make_time(int year, unsigned month, unsigned day, int hour = 0,
                    int minute = 0);

bool is_leap_year(int year);
int days_in_year(int year);

struct CalendarTuple {
  int year = 0;
  int day_of_year = 1; // 1..366
  int hour = 0;
  int minute = 0;
  bool operator==(const CalendarTuple&) const = default;
};

/// Climatology keys a calendar position by (month, day) in leap-year order,
/// so Mar 1 always lands in the same slot whether or not Feb 29 exists.
/// Returns 0..365; Feb 29 is slot 59.
int month_day_slot(unsigned month, unsigned day);
std::pair<unsigned, unsigned> slot_month_day(int slot);

/// Fixed-step UTC sampling grid.
class TimeGrid {
public:
  TimeGrid() : TimeGrid(TimePoint{}, 60, 1) {}
  TimeGrid(TimePoint start, int step_minutes, std::int64_t count);

  TimePoint start() const { return start_; }
  int step_minutes() const { return step_; }
  std::int64_t count() const { return count_; }
  int slots_per_day() const { return 1440 / step_; }

  TimePoint time_at(std::int64_t index) const;
  /// Index of `t` if it is on the grid and inside it.
  std::optional<std::int64_t> index_of(TimePoint t) const;

  CalendarTuple to_calendar(std::int64_t index) const;
  std::int64_t from_calendar(const CalendarTuple& c) const;

  /// Climatology slot (month-day slot, time-of-day slot) of a sample.
  std::pair<int, int> clim_slot(std::int64_t index) const;
  int month_of(std::int64_t index) const;

  bool operator==(const TimeGrid&) const = default;

private:
  TimePoint start_;
  int step_;
  std::int64_t count_;
};

struct StationMeta {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  double easting = 0.0;
  double northing = 0.0;
  double altitude = 0.0;
};

enum class SampleFlag : std::uint8_t { raw = 0, replaced = 1, extrapolated = 2 };

/// Temperatures in Kelvin; NaN marks a null sample.
struct ObservationSeries {
  std::string station_id;
  std::vector<double> values;
  std::vector<SampleFlag> flags;

  static ObservationSeries make(std::string id, std::vector<double> values);
  std::size_t size() const { return values.size(); }
};

enum class SplitLabel : std::uint8_t { train = 0, val = 1, test = 2 };
const char* to_string(SplitLabel label);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Dataset {
  TimeGrid grid;
  std::vector<StationMeta> stations;
  std::vector<ObservationSeries> series; // parallel to `stations`
  std::vector<double> pressure_hpa;      // per station mean, NaN if absent
  std::vector<double> rh_pct_mean;       // per station mean, NaN if absent
  std::vector<SplitLabel> split;         // per sample index, may be empty

  std::size_t station_index(std::string_view id) const;
};

/// Seeded permutation split of `count` samples. Counts are
/// round(train·n), round(val·n) and the remainder.
std::vector<SplitLabel> split_indices(std::int64_t count,
                                      const SplitFractions& fractions,
                                      std::uint64_t seed);

Dataset split_dataset(Dataset d, const SplitFractions& fractions,
                      std::uint64_t seed);

/// Marks every sample in `year` as test and the rest as train/val by the
/// given fractions renormalized over train+val.
std::vector<SplitLabel> split_holdout_year(const TimeGrid& grid, int year,
                                           const SplitFractions& fractions,
                                           std::uint64_t seed);

} // namespace tptkit
