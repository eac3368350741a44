#include "tptkit/climatology.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"

namespace tptkit {

namespace chr = std::chrono;

double ClimatologyTable::at(const TimeGrid& grid, std::int64_t index) const {
  if (grid.step_minutes() != step_minutes) {
    throw ConfigError("climatology step does not match the time grid");
  }
  const auto [d, tod] = grid.clim_slot(index);
  return at(d, tod);
}

ClimatologyTable compute_climatology(const ObservationSeries& series,
                                     const TimeGrid& grid, int window_days,
                                     const std::vector<int>& years) {
  if (window_days < 1 || window_days % 2 == 0) {
    throw ConfigError("climatology window must be a positive odd day count");
  }
  if (static_cast<std::int64_t>(series.size()) != grid.count()) {
    throw ShapeError("series length does not match the time grid");
  }
  const std::int64_t year_samples =
      static_cast<std::int64_t>(365) * grid.slots_per_day();
  if (grid.count() < year_samples) {
    throw ConfigError("climatology needs at least one full year of data");
  }
  const int spd = grid.slots_per_day();
  const int half = window_days / 2;

  std::set<int> year_set(years.begin(), years.end());
  if (year_set.empty()) {
    const int first = grid.to_calendar(0).year;
    const int last = grid.to_calendar(grid.count() - 1).year;
    for (int y = first; y <= last; ++y) {
      year_set.insert(y);
    }
  }

  ClimatologyTable table;
  table.station_id = series.station_id;
  table.step_minutes = grid.step_minutes();
  table.window_days = window_days;
  table.years_used.assign(year_set.begin(), year_set.end());
  std::vector<double> sums(static_cast<std::size_t>(366 * spd), 0.0);
  table.counts.assign(sums.size(), 0);

  for (const int y : year_set) {
    const int len = days_in_year(y);
    // Values of year y as [day][tod], NaN where the grid has no sample.
    std::vector<double> year(static_cast<std::size_t>(len * spd),
                             std::numeric_limits<double>::quiet_NaN());
    const TimePoint jan1 = make_time(y, 1, 1);
    bool any = false;
    for (int k = 0; k < len * spd; ++k) {
      const auto idx = grid.index_of(jan1 + Minutes(k * grid.step_minutes()));
      if (idx) {
        year[static_cast<std::size_t>(k)] =
            series.values[static_cast<std::size_t>(*idx)];
        any = true;
      }
    }
    if (!any) {
      continue;
    }
    for (int day = 0; day < len; ++day) {
      const chr::year_month_day ymd{chr::sys_days{chr::year(y) / 1 / 1} +
                                    chr::days(day)};
      const int slot = month_day_slot(static_cast<unsigned>(ymd.month()),
                                      static_cast<unsigned>(ymd.day()));
      for (int tod = 0; tod < spd; ++tod) {
        double s = 0.0;
        int c = 0;
        for (int d = -half; d <= half; ++d) {
          const int dd = ((day + d) % len + len) % len;
          const double v = year[static_cast<std::size_t>(dd * spd + tod)];
          if (std::isfinite(v)) {
            s += v;
            ++c;
          }
        }
        const auto k = static_cast<std::size_t>(slot * spd + tod);
        sums[k] += s;
        table.counts[k] += c;
      }
    }
  }

  table.mean_k.resize(sums.size());
  constexpr int kFeb29 = 59;
  for (int slot = 0; slot < 366; ++slot) {
    for (int tod = 0; tod < spd; ++tod) {
      const auto k = static_cast<std::size_t>(slot * spd + tod);
      if (table.counts[k] > 0) {
        table.mean_k[k] = sums[k] / table.counts[k];
      } else if (slot != kFeb29) {
        throw ConfigError("climatology slot " + std::to_string(slot) +
                          " has no contributing samples");
      }
    }
  }
  // No leap year in the record: Feb 29 takes the mean of its neighbours.
  for (int tod = 0; tod < spd; ++tod) {
    const auto k = static_cast<std::size_t>(kFeb29 * spd + tod);
    if (table.counts[k] == 0) {
      table.mean_k[k] = 0.5 * (table.mean_k[k - static_cast<std::size_t>(spd)] +
                               table.mean_k[k + static_cast<std::size_t>(spd)]);
    }
  }
  return table;
}

std::vector<double> decompose(const std::vector<double>& temps_k,
                              const TimeGrid& grid,
                              const ClimatologyTable& table) {
  if (static_cast<std::int64_t>(temps_k.size()) != grid.count()) {
    throw ShapeError("series length does not match the time grid");
  }
  std::vector<double> out(temps_k.size());
  for (std::int64_t t = 0; t < grid.count(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    out[i] = temps_k[i] - table.at(grid, t);
  }
  return out;
}

std::vector<double> recompose(const std::vector<double>& tprime,
                              const TimeGrid& grid,
                              const ClimatologyTable& table) {
  if (static_cast<std::int64_t>(tprime.size()) != grid.count()) {
    throw ShapeError("series length does not match the time grid");
  }
  std::vector<double> out(tprime.size());
  for (std::int64_t t = 0; t < grid.count(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    out[i] = tprime[i] + table.at(grid, t);
  }
  return out;
}

std::vector<double> climatology_forecast(std::size_t n) {
  return std::vector<double>(n, 0.0);
}

void write_climatology_csv(const std::filesystem::path& path,
                           const ClimatologyTable& table) {
  io::write_atomic(path, [&](std::ostream& o) {
    o << "mmdd,slot_minute,mean_k\n";
    const int spd = table.slots_per_day();
    char mmdd[8];
    for (int slot = 0; slot < 366; ++slot) {
      const auto [m, d] = slot_month_day(slot);
      std::snprintf(mmdd, sizeof mmdd, "%02u%02u", m, d);
      for (int tod = 0; tod < spd; ++tod) {
        o << mmdd << ',' << tod * table.step_minutes << ','
          << io::format_double(table.at(slot, tod)) << '\n';
      }
    }
  });
}

ClimatologyTable read_climatology_csv(const std::filesystem::path& path,
                                      const std::string& station_id) {
  io::require_artifact(path, "climatology");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("mmdd,slot_minute,mean_k", 0) != 0) {
    throw InputError(path.string() + ": unexpected header");
  }
  std::vector<std::tuple<int, int, double>> rows;
  int max_minute = 0;
  int min_positive_minute = 1440;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    const auto f = io::split_csv(line);
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3 || f[0].size() != 4) {
      throw InputError(ctx + ": malformed row");
    }
    const auto month = static_cast<unsigned>(
        io::parse_double(f[0].substr(0, 2), ctx));
    const auto day = static_cast<unsigned>(
        io::parse_double(f[0].substr(2, 2), ctx));
    const int minute = static_cast<int>(io::parse_double(f[1], ctx));
    max_minute = std::max(max_minute, minute);
    if (minute > 0) {
      min_positive_minute = std::min(min_positive_minute, minute);
    }
    rows.emplace_back(month_day_slot(month, day), minute,
                      io::parse_double(f[2], ctx));
  }
  ClimatologyTable t;
  t.station_id = station_id;
  t.step_minutes = max_minute == 0 ? 1440 : min_positive_minute;
  const int spd = t.slots_per_day();
  t.mean_k.assign(static_cast<std::size_t>(366 * spd),
                  std::numeric_limits<double>::quiet_NaN());
  t.counts.assign(t.mean_k.size(), 0);
  for (const auto& [slot, minute, v] : rows) {
    t.mean_k[static_cast<std::size_t>(slot * spd + minute / t.step_minutes)] = v;
  }
  for (double v : t.mean_k) {
    if (!std::isfinite(v)) {
      throw InputError(path.string() + ": incomplete climatology table");
    }
  }
  return t;
}

} // namespace tptkit
