#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tptkit/core_model.hpp"

namespace tptkit {

/// Periodic mean per (month-day slot, time-of-day slot), in Kelvin.
struct ClimatologyTable {
  std::string station_id;
  int step_minutes = 60;
  int window_days = 21;
  std::vector<int> years_used;
  std::vector<double> mean_k; // [366][slots_per_day]
  std::vector<int> counts;    // contributors per slot

  int slots_per_day() const { return 1440 / step_minutes; }
  std::size_t slot_count() const { return mean_k.size(); }
  double at(int day_slot, int tod_slot) const {
    return mean_k[static_cast<std::size_t>(day_slot * slots_per_day() +
                                           tod_slot)];
  }
  /// Climatology value for sample `index` of `grid`.
  double at(const TimeGrid& grid, std::int64_t index) const;
};

/// Slot mean over the given years and over day offsets within ±window/2,
/// wrapping circularly inside each year. Leap-day slots only draw from leap
/// years; every slot is normalized by its actual contributor count. When
/// `years` is empty every year touched by the grid is used.
ClimatologyTable compute_climatology(const ObservationSeries& series,
                                     const TimeGrid& grid,
                                     int window_days = 21,
                                     const std::vector<int>& years = {});

std::vector<double> decompose(const std::vector<double>& temps_k,
                              const TimeGrid& grid,
                              const ClimatologyTable& table);
std::vector<double> recompose(const std::vector<double>& tprime,
                              const TimeGrid& grid,
                              const ClimatologyTable& table);

/// Zero-fluctuation forecast for `n` points.
std::vector<double> climatology_forecast(std::size_t n);

/// `climatology/<station_id>.csv` with columns `mmdd,slot_minute,mean_k`.
void write_climatology_csv(const std::filesystem::path& path,
                           const ClimatologyTable& table);
ClimatologyTable read_climatology_csv(const std::filesystem::path& path,
                                      const std::string& station_id);

} // namespace tptkit
