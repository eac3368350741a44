#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/gridding.hpp"

namespace tptkit {

/// √(mean_t (clim + pred′ - truth)²) over samples where all three are finite.
/// ShapeError on length mismatch, InputError when nothing is comparable.
double rmse_station(std::span<const double> pred_tprime,
                    std::span<const double> truth_k,
                    std::span<const double> clim_k);

/// Arithmetic mean of per-station RMSE; InputError when empty.
double rmse_aggregate(std::span<const double> per_station);

/// Per-node time RMSE averaged over inland nodes. Fields are [t][node].
double rmse_mesh(std::span<const double> pred, std::span<const double> truth,
                 const Mask& inland, std::size_t steps);

struct MonthlyRow {
  int month = 0;
  std::int64_t samples = 0;
  double rmse = 0.0; // NaN when empty
  bool empty = true;
};

/// Per-month RMSE: each station's RMSE over the month's samples, averaged
/// over stations. `residuals` is [k][station] aligned with `times`.
std::array<MonthlyRow, 12> slice_monthly(const TimeGrid& grid,
                                         std::span<const std::int64_t> times,
                                         std::span<const double> residuals,
                                         std::size_t stations);

struct ScatterRow {
  std::string station_id;
  double rmse = 0.0;
  double its_hours = 0.0;
  double altitude_m = 0.0;
  int density = 0; // other stations within the radius
};

std::vector<ScatterRow> scatter_extract(const std::vector<StationMeta>& stations,
                                        std::span<const double> rmse,
                                        std::span<const double> its_hours,
                                        double radius_km = 30.0);

/// Inland RMSE of each instance of a field sequence ([t][node]).
std::vector<double> instance_rmse(std::span<const double> pred,
                                  std::span<const double> truth,
                                  const Mask& inland, std::size_t steps);

struct BestWorst {
  std::size_t best = 0;
  std::size_t worst = 0;
  double best_error = 0.0;
  double worst_error = 0.0;
};

/// argmin / argmax with ties going to the earliest instance.
BestWorst best_worst(std::span<const double> instance_error);

/// Station forecasts in temperature space on the truth grid, [t][station] in
/// Kelvin, NaN where absent.
struct ForecastTable {
  int lead_hours = 0;
  std::vector<double> temp_k;
  std::int64_t rows = 0;
  std::int64_t rows_unmatched = 0; // unknown station, off-grid or other lead
};

/// Reads `timestamp_utc,station_id,lead_h,temp_c`, timestamps being valid
/// times, keeping rows with the requested lead.
ForecastTable read_forecast_csv(std::istream& in, const Dataset& truth, int lead_hours);
ForecastTable read_forecast_csv(const std::filesystem::path& path, const Dataset& truth,
                                int lead_hours);
void write_forecast_csv(const std::filesystem::path& path, const Dataset& truth,
                        int lead_hours, std::span<const double> temp_k,
                        std::span<const std::int64_t> times);

struct EvalReport {
  std::string model;
  int lead_hours = 0;
  std::vector<std::string> station_ids;
  std::vector<double> rmse_station;
  std::vector<std::int64_t> samples; // N_t per station
  double rmse = 0.0;
  double coverage = 1.0;
  std::array<MonthlyRow, 12> monthly{};

  nlohmann::json to_json() const;
};

/// Per-station and aggregate RMSE of a forecast table against observed temperatures at
/// valid times `times`. Missing forecasts are excluded and reported through
/// `coverage`.
EvalReport evaluate_forecast(const std::string& model, const ForecastTable& forecast,
                             const Dataset& truth, std::span<const std::int64_t> times);

/// Same as evaluate_forecast for an external file.
EvalReport compare_external(const std::filesystem::path& forecast_csv,
                            const Dataset& truth, int lead_hours,
                            std::span<const std::int64_t> times);

/// rmse_station.csv and monthly.csv with one column per report.
void write_rmse_station_csv(const std::filesystem::path& path,
                            const std::vector<EvalReport>& reports);
void write_monthly_csv(const std::filesystem::path& path,
                       const std::vector<EvalReport>& reports);
void write_scatter_csv(const std::filesystem::path& path,
                       const std::vector<ScatterRow>& rows);

} // namespace tptkit
