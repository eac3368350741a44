#include "tptkit/ingest_qc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"
#include "tptkit/parallel.hpp"

namespace tptkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int column_of(const std::vector<std::string_view>& header,
              std::string_view name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

} // namespace

void QcConfig::validate() const {
  if (!(min_temp_c < max_temp_c)) {
    throw ConfigError("qc: min_temp must be below max_temp");
  }
  if (!(max_deviation_k > 0)) {
    throw ConfigError("qc: max_deviation must be positive");
  }
  if (end_fill_window < 1) {
    throw ConfigError("qc: end_fill_window must be at least 1");
  }
}

nlohmann::json QcReport::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stations) {
    st.push_back({{"station_id", s.station_id},
                  {"range_flagged", s.range_flagged},
                  {"deviation_flagged", s.deviation_flagged},
                  {"null_filled", s.null_filled},
                  {"duplicates", s.duplicates},
                  {"replaced", s.replaced}});
  }
  return {{"total_samples", total_samples},
          {"total_replaced", total_replaced},
          {"replaced_fraction", replaced_fraction},
          {"stations", st}};
}

std::vector<StationMeta> read_station_meta(std::istream& in,
                                           const GeoBox& box) {
  std::string line;
  if (!std::getline(in, line)) {
    throw IngestError("station metadata: empty file");
  }
  const auto header = io::split_csv(line);
  const int c_id = column_of(header, "id");
  const int c_lat = column_of(header, "lat");
  const int c_lon = column_of(header, "lon");
  const int c_e = column_of(header, "easting");
  const int c_n = column_of(header, "northing");
  const int c_alt = column_of(header, "altitude_m");
  if (c_id < 0 || c_lat < 0 || c_lon < 0 || c_alt < 0 || (c_e < 0) != (c_n < 0)) {
    throw IngestError("station metadata: header must be "
                      "id,lat,lon[,easting,northing],altitude_m");
  }
  std::vector<StationMeta> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto f = io::split_csv(line);
    const std::string ctx = "station metadata line " + std::to_string(lineno);
    if (f.size() != header.size()) {
      throw IngestError(ctx + ": expected " + std::to_string(header.size()) +
                        " fields");
    }
    StationMeta m;
    try {
      m.id = std::string(f[static_cast<std::size_t>(c_id)]);
      m.lat = io::parse_double(f[static_cast<std::size_t>(c_lat)], ctx);
      m.lon = io::parse_double(f[static_cast<std::size_t>(c_lon)], ctx);
      m.altitude = io::parse_double(f[static_cast<std::size_t>(c_alt)], ctx);
      const bool have_xy = c_e >= 0 && !f[static_cast<std::size_t>(c_e)].empty();
      if (have_xy) {
        m.easting = io::parse_double(f[static_cast<std::size_t>(c_e)], ctx);
        m.northing = io::parse_double(f[static_cast<std::size_t>(c_n)], ctx);
      } else {
        std::tie(m.easting, m.northing) = project(m.lat, m.lon, box);
      }
    } catch (const IngestError&) {
      throw;
    } catch (const Error& e) {
      throw IngestError(ctx + ": " + e.what());
    }
    if (m.altitude < 0) {
      throw IngestError(ctx + ": negative altitude");
    }
    if (!box.contains(m.lat, m.lon)) {
      throw IngestError(ctx + ": station " + m.id +
                        " outside the configured domain");
    }
    out.push_back(std::move(m));
  }
  return out;
}

IngestResult ingest(std::istream& meta_csv, std::istream& obs_csv,
                    const TimeGrid& grid, const GeoBox& box) {
  IngestResult r{Dataset{grid, read_station_meta(meta_csv, box), {}, {}, {}, {}},
                 {}, 0, 0};
  Dataset& d = r.dataset;
  const std::size_t ns = d.stations.size();
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < ns; ++i) {
    if (!index.emplace(d.stations[i].id, i).second) {
      throw IngestError("duplicate station id " + d.stations[i].id);
    }
    d.series.push_back(ObservationSeries::make(
        d.stations[i].id,
        std::vector<double>(static_cast<std::size_t>(grid.count()), kNaN)));
  }
  r.duplicates.assign(ns, 0);
  std::vector<double> p_sum(ns, 0.0), rh_sum(ns, 0.0);
  std::vector<std::int64_t> p_n(ns, 0), rh_n(ns, 0);
  std::vector<std::vector<bool>> seen(
      ns, std::vector<bool>(static_cast<std::size_t>(grid.count()), false));

  std::string line;
  if (!std::getline(obs_csv, line)) {
    throw IngestError("observations: empty file");
  }
  const auto header = io::split_csv(line);
  const int c_ts = column_of(header, "timestamp_utc");
  const int c_id = column_of(header, "station_id");
  const int c_t = column_of(header, "temp_c");
  const int c_p = column_of(header, "pressure_hpa");
  const int c_rh = column_of(header, "rh_pct");
  if (c_ts != 0 || c_id != 1 || c_t != 2) {
    throw IngestError(
        "observations: header must be "
        "timestamp_utc,station_id,temp_c[,pressure_hpa][,rh_pct]");
  }
  std::size_t lineno = 1;
  while (std::getline(obs_csv, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      continue;
    }
    const std::string ctx = "observations line " + std::to_string(lineno);
    const auto f = io::split_csv(line);
    if (f.size() != header.size()) {
      throw IngestError(ctx + ": expected " + std::to_string(header.size()) +
                        " fields");
    }
    ++r.rows;
    const auto it = index.find(f[1]);
    if (it == index.end()) {
      throw IngestError(ctx + ": unknown station id " + std::string(f[1]));
    }
    const std::size_t s = it->second;
    TimePoint t;
    double temp = kNaN;
    try {
      t = parse_timestamp(f[0]);
      if (!f[2].empty() && f[2] != "NaN" && f[2] != "nan") {
        temp = celsius_to_kelvin(io::parse_double(f[2], ctx));
      }
      if (c_p >= 0 && !f[static_cast<std::size_t>(c_p)].empty()) {
        const double p = io::parse_double(f[static_cast<std::size_t>(c_p)], ctx);
        if (std::isfinite(p)) {
          p_sum[s] += p;
          ++p_n[s];
        }
      }
      if (c_rh >= 0 && !f[static_cast<std::size_t>(c_rh)].empty()) {
        const double h = io::parse_double(f[static_cast<std::size_t>(c_rh)], ctx);
        if (std::isfinite(h)) {
          rh_sum[s] += h;
          ++rh_n[s];
        }
      }
    } catch (const IngestError&) {
      throw;
    } catch (const Error& e) {
      throw IngestError(ctx + ": " + e.what());
    }
    const auto idx = grid.index_of(t);
    if (!idx) {
      ++r.rows_outside_grid;
      continue;
    }
    const auto i = static_cast<std::size_t>(*idx);
    if (seen[s][i]) {
      ++r.duplicates[s];
    }
    seen[s][i] = true;
    d.series[s].values[i] = temp;
  }
  d.pressure_hpa.resize(ns);
  d.rh_pct_mean.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    d.pressure_hpa[s] = p_n[s] > 0 ? p_sum[s] / static_cast<double>(p_n[s]) : kNaN;
    d.rh_pct_mean[s] = rh_n[s] > 0 ? rh_sum[s] / static_cast<double>(rh_n[s]) : kNaN;
  }
  return r;
}

IngestResult ingest(const std::filesystem::path& meta_csv,
                    const std::filesystem::path& obs_csv, const TimeGrid& grid,
                    const GeoBox& box) {
  std::ifstream meta(meta_csv);
  if (!meta) {
    throw IngestError("cannot open " + meta_csv.string());
  }
  std::ifstream obs(obs_csv);
  if (!obs) {
    throw IngestError("cannot open " + obs_csv.string());
  }
  return ingest(meta, obs, grid, box);
}

std::int64_t qc_range(ObservationSeries& series, const QcConfig& cfg) {
  const double lo = celsius_to_kelvin(cfg.min_temp_c);
  const double hi = celsius_to_kelvin(cfg.max_temp_c);
  std::int64_t n = 0;
  for (double& v : series.values) {
    if (std::isfinite(v) && (v < lo || v > hi)) {
      v = kNaN;
      ++n;
    } else if (std::isinf(v)) {
      v = kNaN;
      ++n;
    }
  }
  return n;
}

std::int64_t qc_deviation(ObservationSeries& series, const TimeGrid& grid,
                          const ClimatologyTable& climatology,
                          const QcConfig& cfg) {
  if (climatology.step_minutes != grid.step_minutes() ||
      climatology.slot_count() !=
          static_cast<std::size_t>(366 * grid.slots_per_day())) {
    throw ConfigError("climatology for station " + series.station_id +
                      " does not cover the grid's slots");
  }
  std::int64_t n = 0;
  for (std::int64_t t = 0; t < grid.count(); ++t) {
    double& v = series.values[static_cast<std::size_t>(t)];
    if (!std::isfinite(v)) {
      continue;
    }
    const double c = climatology.at(grid, t);
    if (!std::isfinite(c)) {
      throw ConfigError("missing climatology slot for station " +
                        series.station_id);
    }
    if (std::abs(v - c) > cfg.max_deviation_k) {
      v = kNaN;
      ++n;
    }
  }
  return n;
}

std::int64_t fill_gaps(ObservationSeries& series, int end_fill_window) {
  auto& v = series.values;
  const std::size_t n = v.size();
  if (series.flags.size() != n) {
    series.flags.assign(n, SampleFlag::raw);
  }
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isfinite(v[i])) {
      valid.push_back(i);
    }
  }
  if (valid.empty()) {
    throw UnrecoverableSeriesError("station " + series.station_id +
                                   " has no valid samples");
  }
  const auto window = static_cast<std::size_t>(std::max(1, end_fill_window));
  std::int64_t replaced = 0;

  const std::size_t first = valid.front();
  if (first > 0) {
    const std::size_t k = std::min(window, valid.size());
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      s += v[valid[j]];
    }
    const double fill = s / static_cast<double>(k);
    for (std::size_t i = 0; i < first; ++i) {
      v[i] = fill;
      series.flags[i] = SampleFlag::extrapolated;
      ++replaced;
    }
  }
  const std::size_t last = valid.back();
  if (last + 1 < n) {
    const std::size_t k = std::min(window, valid.size());
    double s = 0.0;
    for (std::size_t j = valid.size() - k; j < valid.size(); ++j) {
      s += v[valid[j]];
    }
    const double fill = s / static_cast<double>(k);
    for (std::size_t i = last + 1; i < n; ++i) {
      v[i] = fill;
      series.flags[i] = SampleFlag::extrapolated;
      ++replaced;
    }
  }
  for (std::size_t j = 0; j + 1 < valid.size(); ++j) {
    const std::size_t a = valid[j], b = valid[j + 1];
    if (b == a + 1) {
      continue;
    }
    const double va = v[a], vb = v[b];
    const double span = static_cast<double>(b - a);
    for (std::size_t i = a + 1; i < b; ++i) {
      const double w = static_cast<double>(i - a) / span;
      v[i] = va + w * (vb - va);
      series.flags[i] = SampleFlag::replaced;
      ++replaced;
    }
  }
  return replaced;
}

QcResult run_qc(Dataset dataset, const QcConfig& cfg,
                const std::vector<int>& clim_years,
                const std::vector<std::int64_t>& duplicates) {
  cfg.validate();
  const std::size_t ns = dataset.series.size();
  QcResult r;
  r.climatology.resize(ns);
  std::vector<StationQc> stats(ns);
  parallel_for(0, ns, [&](std::size_t s) {
    auto& series = dataset.series[s];
    auto& st = stats[s];
    st.station_id = series.station_id;
    st.duplicates = duplicates.empty() ? 0 : duplicates[s];
    const auto original = series.values;
    for (double v : original) {
      if (std::isnan(v)) {
        ++st.null_filled;
      }
    }
    st.range_flagged = qc_range(series, cfg);
    const auto after_range = series.values;
    fill_gaps(series, cfg.end_fill_window);
    const auto provisional = compute_climatology(series, dataset.grid,
                                                 cfg.window_days, clim_years);
    // Deviation check runs on the range-checked values, not on the fill.
    series.values = after_range;
    series.flags.assign(series.values.size(), SampleFlag::raw);
    st.deviation_flagged =
        qc_deviation(series, dataset.grid, provisional, cfg);
    st.replaced = fill_gaps(series, cfg.end_fill_window);
    r.climatology[s] = compute_climatology(series, dataset.grid,
                                           cfg.window_days, clim_years);
  });

  r.report.total_samples =
      static_cast<std::int64_t>(ns) * dataset.grid.count();
  for (const auto& st : stats) {
    r.report.total_replaced += st.replaced;
  }
  r.report.replaced_fraction =
      r.report.total_samples > 0
          ? static_cast<double>(r.report.total_replaced) /
                static_cast<double>(r.report.total_samples)
          : 0.0;
  r.report.stations = std::move(stats);
  std::sort(r.report.stations.begin(), r.report.stations.end(),
            [](const StationQc& a, const StationQc& b) {
              return a.station_id < b.station_id;
            });
  r.dataset = std::move(dataset);
  return r;
}

} // namespace tptkit
