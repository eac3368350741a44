#include "tptkit/evaluate.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"

namespace tptkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_inland(const Mask& inland, std::size_t px, std::size_t total, std::size_t steps) {
  if (px == 0 || total != steps * px)
    throw ShapeError("field sequence of " + std::to_string(total) +
                     " values does not match " + std::to_string(steps) +
                     " steps of " + std::to_string(inland.size()) + " nodes");
  std::size_t n = 0;
  for (auto m : inland) n += m != 0;
  if (n == 0) throw ConfigError("inland mask is empty");
}

} // namespace

double rmse_station(std::span<const double> pred_tprime, std::span<const double> truth_k,
                    std::span<const double> clim_k) {
  if (pred_tprime.size() != truth_k.size() || clim_k.size() != truth_k.size())
    throw ShapeError("rmse_station: series lengths differ (" +
                     std::to_string(pred_tprime.size()) + ", " +
                     std::to_string(truth_k.size()) + ", " +
                     std::to_string(clim_k.size()) + ")");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < truth_k.size(); ++t) {
    double e = clim_k[t] + pred_tprime[t] - truth_k[t];
    if (!std::isfinite(e)) continue;
    sum += e * e;
    ++n;
  }
  if (n == 0) throw InputError("rmse_station: no comparable samples");
  return std::sqrt(sum / static_cast<double>(n));
}

double rmse_aggregate(std::span<const double> per_station) {
  if (per_station.empty()) throw InputError("rmse_aggregate: no stations");
  double s = 0.0;
  for (double v : per_station) s += v;
  return s / static_cast<double>(per_station.size());
}

double rmse_mesh(std::span<const double> pred, std::span<const double> truth,
                 const Mask& inland, std::size_t steps) {
  if (pred.size() != truth.size())
    throw ShapeError("rmse_mesh: prediction and truth sizes differ");
  std::size_t px = inland.size();
  check_inland(inland, px, truth.size(), steps);
  double acc = 0.0;
  std::size_t nodes = 0;
  for (std::size_t k = 0; k < px; ++k) {
    if (!inland[k]) continue;
    double s = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      double e = pred[t * px + k] - truth[t * px + k];
      s += e * e;
    }
    acc += std::sqrt(s / static_cast<double>(steps));
    ++nodes;
  }
  return acc / static_cast<double>(nodes);
}

std::array<MonthlyRow, 12> slice_monthly(const TimeGrid& grid,
                                         std::span<const std::int64_t> times,
                                         std::span<const double> residuals,
                                         std::size_t stations) {
  if (residuals.size() != times.size() * stations)
    throw ShapeError("slice_monthly: residuals do not match times × stations");
  std::array<MonthlyRow, 12> out{};
  std::vector<double> sum(12 * stations, 0.0);
  std::vector<std::int64_t> cnt(12 * stations, 0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    int m = grid.month_of(times[k]) - 1;
    out[static_cast<std::size_t>(m)].samples += 1;
    for (std::size_t s = 0; s < stations; ++s) {
      double e = residuals[k * stations + s];
      if (!std::isfinite(e)) continue;
      sum[static_cast<std::size_t>(m) * stations + s] += e * e;
      cnt[static_cast<std::size_t>(m) * stations + s] += 1;
    }
  }
  for (std::size_t m = 0; m < 12; ++m) {
    auto& row = out[m];
    row.month = static_cast<int>(m) + 1;
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < stations; ++s) {
      auto c = cnt[m * stations + s];
      if (c == 0) continue;
      acc += std::sqrt(sum[m * stations + s] / static_cast<double>(c));
      ++n;
    }
    row.empty = n == 0;
    row.rmse = n ? acc / static_cast<double>(n) : kNaN;
  }
  return out;
}

std::vector<ScatterRow> scatter_extract(const std::vector<StationMeta>& stations,
                                        std::span<const double> rmse,
                                        std::span<const double> its_hours,
                                        double radius_km) {
  if (rmse.size() != stations.size() || its_hours.size() != stations.size())
    throw ShapeError("scatter_extract: per-station arrays do not match station count");
  double r = radius_km * 1000.0;
  std::vector<ScatterRow> rows(stations.size());
  for (std::size_t i = 0; i < stations.size(); ++i) {
    Point2 a{stations[i].easting, stations[i].northing};
    int d = 0;
    for (std::size_t j = 0; j < stations.size(); ++j) {
      if (j == i) continue;
      if (distance(a, {stations[j].easting, stations[j].northing}) <= r) ++d;
    }
    rows[i] = {stations[i].id, rmse[i], its_hours[i], stations[i].altitude, d};
  }
  return rows;
}

std::vector<double> instance_rmse(std::span<const double> pred, std::span<const double> truth,
                                  const Mask& inland, std::size_t steps) {
  if (pred.size() != truth.size())
    throw ShapeError("instance_rmse: prediction and truth sizes differ");
  std::size_t px = inland.size();
  check_inland(inland, px, truth.size(), steps);
  std::vector<double> out(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < px; ++k) {
      if (!inland[k]) continue;
      double e = pred[t * px + k] - truth[t * px + k];
      s += e * e;
      ++n;
    }
    out[t] = std::sqrt(s / static_cast<double>(n));
  }
  return out;
}

BestWorst best_worst(std::span<const double> err) {
  if (err.empty()) throw InputError("best_worst: no instances");
  BestWorst bw{0, 0, err[0], err[0]};
  for (std::size_t i = 1; i < err.size(); ++i) {
    if (err[i] < bw.best_error) bw.best = i, bw.best_error = err[i];
    if (err[i] > bw.worst_error) bw.worst = i, bw.worst_error = err[i];
  }
  return bw;
}

ForecastTable read_forecast_csv(std::istream& in, const Dataset& truth, int lead_hours) {
  ForecastTable f;
  f.lead_hours = lead_hours;
  std::size_t ns = truth.stations.size();
  f.temp_k.assign(static_cast<std::size_t>(truth.grid.count()) * ns, kNaN);
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t s = 0; s < ns; ++s) idx.emplace(truth.stations[s].id, s);

  std::string line;
  if (!std::getline(in, line)) throw InputError("forecast file is empty");
  auto header = io::split_csv(line);
  int c_ts = -1, c_id = -1, c_lead = -1, c_temp = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto h = header[i];
    if (h == "timestamp_utc") c_ts = static_cast<int>(i);
    else if (h == "station_id") c_id = static_cast<int>(i);
    else if (h == "lead_h") c_lead = static_cast<int>(i);
    else if (h == "temp_c") c_temp = static_cast<int>(i);
  }
  if (c_ts < 0 || c_id < 0 || c_temp < 0)
    throw InputError("forecast file needs timestamp_utc, station_id and temp_c columns");

  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = io::split_csv(line);
    auto need = static_cast<std::size_t>(std::max({c_ts, c_id, c_lead, c_temp}));
    if (fields.size() <= need)
      throw InputError("forecast line " + std::to_string(lineno) + ": too few fields");
    ++f.rows;
    std::string ctx = "forecast line " + std::to_string(lineno);
    if (c_lead >= 0 &&
        io::parse_double(fields[static_cast<std::size_t>(c_lead)], ctx) != lead_hours) {
      ++f.rows_unmatched;
      continue;
    }
    auto it = idx.find(std::string(fields[static_cast<std::size_t>(c_id)]));
    auto t = truth.grid.index_of(parse_timestamp(fields[static_cast<std::size_t>(c_ts)]));
    auto temp = fields[static_cast<std::size_t>(c_temp)];
    if (it == idx.end() || !t || temp.empty()) {
      ++f.rows_unmatched;
      continue;
    }
    f.temp_k[static_cast<std::size_t>(*t) * ns + it->second] =
        celsius_to_kelvin(io::parse_double(temp, ctx));
  }
  return f;
}

ForecastTable read_forecast_csv(const std::filesystem::path& path, const Dataset& truth,
                                int lead_hours) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open forecast file " + path.string());
  return read_forecast_csv(in, truth, lead_hours);
}

void write_forecast_csv(const std::filesystem::path& path, const Dataset& truth,
                        int lead_hours, std::span<const double> temp_k,
                        std::span<const std::int64_t> times) {
  std::size_t ns = truth.stations.size();
  if (temp_k.size() != times.size() * ns)
    throw ShapeError("write_forecast_csv: values do not match times × stations");
  io::write_atomic(path, [&](std::ostream& out) {
    out << "timestamp_utc,station_id,lead_h,temp_c\n";
    for (std::size_t k = 0; k < times.size(); ++k) {
      std::string ts = format_timestamp(truth.grid.time_at(times[k]));
      for (std::size_t s = 0; s < ns; ++s) {
        double v = temp_k[k * ns + s];
        if (!std::isfinite(v)) continue;
        out << ts << ',' << truth.stations[s].id << ',' << lead_hours << ','
            << io::format_double(std::round(kelvin_to_celsius(v) * 1e4) / 1e4) << '\n';
      }
    }
  });
}

EvalReport evaluate_forecast(const std::string& model, const ForecastTable& forecast,
                             const Dataset& truth, std::span<const std::int64_t> times) {
  std::size_t ns = truth.stations.size();
  if (forecast.temp_k.size() != static_cast<std::size_t>(truth.grid.count()) * ns)
    throw ShapeError("forecast table does not match the truth grid");
  EvalReport r;
  r.model = model;
  r.lead_hours = forecast.lead_hours;
  std::vector<double> resid(times.size() * ns, kNaN);
  std::vector<double> sum(ns, 0.0);
  std::vector<std::int64_t> n(ns, 0);
  std::int64_t expected = 0, matched = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    auto t = static_cast<std::size_t>(times[k]);
    for (std::size_t s = 0; s < ns; ++s) {
      double obs = truth.series[s].values[t];
      if (!std::isfinite(obs)) continue;
      ++expected;
      double e = forecast.temp_k[t * ns + s] - obs;
      if (!std::isfinite(e)) continue;
      ++matched;
      resid[k * ns + s] = e;
      sum[s] += e * e;
      ++n[s];
    }
  }
  for (std::size_t s = 0; s < ns; ++s) {
    if (n[s] == 0) continue;
    r.station_ids.push_back(truth.stations[s].id);
    r.rmse_station.push_back(std::sqrt(sum[s] / static_cast<double>(n[s])));
    r.samples.push_back(n[s]);
  }
  if (r.rmse_station.empty())
    throw InputError("no forecast matched an observation for model " + model);
  r.rmse = rmse_aggregate(r.rmse_station);
  r.coverage = expected ? static_cast<double>(matched) / static_cast<double>(expected) : 0.0;
  r.monthly = slice_monthly(truth.grid, times, resid, ns);
  return r;
}

EvalReport compare_external(const std::filesystem::path& forecast_csv, const Dataset& truth,
                            int lead_hours, std::span<const std::int64_t> times) {
  return evaluate_forecast("external", read_forecast_csv(forecast_csv, truth, lead_hours),
                           truth, times);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json monthly_j = nlohmann::json::array();
  for (const auto& m : monthly) {
    monthly_j.push_back({{"month", m.month},
                         {"samples", m.samples},
                         {"empty", m.empty},
                         {"rmse", m.empty ? nlohmann::json(nullptr) : nlohmann::json(m.rmse)}});
  }
  return {{"model", model},
          {"lead_hours", lead_hours},
          {"rmse", rmse},
          {"stations", station_ids.size()},
          {"coverage", coverage},
          {"monthly", monthly_j}};
}

void write_rmse_station_csv(const std::filesystem::path& path,
                            const std::vector<EvalReport>& reports) {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> row;
  for (const auto& r : reports)
    for (const auto& id : r.station_ids)
      if (row.emplace(id, ids.size()).second) ids.push_back(id);
  std::vector<std::vector<double>> cols(reports.size(), std::vector<double>(ids.size(), kNaN));
  for (std::size_t c = 0; c < reports.size(); ++c)
    for (std::size_t i = 0; i < reports[c].station_ids.size(); ++i)
      cols[c][row[reports[c].station_ids[i]]] = reports[c].rmse_station[i];
  io::write_atomic(path, [&](std::ostream& out) {
    out << "station_id";
    for (const auto& r : reports) out << ',' << r.model;
    out << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out << ids[i];
      for (const auto& col : cols) {
        out << ',';
        if (std::isfinite(col[i])) out << io::format_double(col[i]);
      }
      out << '\n';
    }
  });
}

void write_monthly_csv(const std::filesystem::path& path,
                       const std::vector<EvalReport>& reports) {
  io::write_atomic(path, [&](std::ostream& out) {
    out << "month";
    for (const auto& r : reports) out << ',' << r.model;
    out << '\n';
    for (std::size_t m = 0; m < 12; ++m) {
      out << m + 1;
      for (const auto& r : reports) {
        out << ',';
        if (!r.monthly[m].empty) out << io::format_double(r.monthly[m].rmse);
      }
      out << '\n';
    }
  });
}

void write_scatter_csv(const std::filesystem::path& path, const std::vector<ScatterRow>& rows) {
  io::write_atomic(path, [&](std::ostream& out) {
    out << "station_id,rmse,its_hours,altitude_m,density_30km\n";
    for (const auto& r : rows)
      out << r.station_id << ',' << io::format_double(r.rmse) << ','
          << io::format_double(r.its_hours) << ',' << io::format_double(r.altitude_m) << ','
          << r.density << '\n';
  });
}

} // namespace tptkit
