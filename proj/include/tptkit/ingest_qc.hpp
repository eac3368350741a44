#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "tptkit/climatology.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/projection.hpp"

namespace tptkit {

struct QcConfig {
  double min_temp_c = -32.6;
  double max_temp_c = 41.0;
  double max_deviation_k = 20.0;
  int end_fill_window = 60;
  int window_days = 21;

  void validate() const;
};

struct StationQc {
  std::string station_id;
  std::int64_t range_flagged = 0;
  std::int64_t deviation_flagged = 0;
  std::int64_t null_filled = 0;
  std::int64_t duplicates = 0;
  std::int64_t replaced = 0;
};

struct QcReport {
  std::vector<StationQc> stations; // sorted by station id
  std::int64_t total_samples = 0;
  std::int64_t total_replaced = 0;
  double replaced_fraction = 0.0;

  nlohmann::json to_json() const;
};

struct IngestResult {
  Dataset dataset;
  std::vector<std::int64_t> duplicates; // per station
  std::int64_t rows = 0;
  std::int64_t rows_outside_grid = 0;
};

/// Station metadata CSV: `id,lat,lon[,easting,northing],altitude_m`. Missing
/// projected coordinates are computed with EPSG:5179.
std::vector<StationMeta> read_station_meta(std::istream& in,
                                           const GeoBox& box = GeoBox{});

/// Observation CSV: `timestamp_utc,station_id,temp_c[,pressure_hpa][,rh_pct]`.
/// Missing timestamps stay null (NaN); duplicate timestamps keep the last row.
IngestResult ingest(std::istream& meta_csv, std::istream& obs_csv,
                    const TimeGrid& grid, const GeoBox& box = GeoBox{});
IngestResult ingest(const std::filesystem::path& meta_csv,
                    const std::filesystem::path& obs_csv, const TimeGrid& grid,
                    const GeoBox& box = GeoBox{});

/// Nulls samples outside [min_temp, max_temp]; returns the flagged count.
std::int64_t qc_range(ObservationSeries& series, const QcConfig& cfg);

/// Nulls samples deviating from the climatology by more than max_deviation
/// (strict); returns the flagged count.
std::int64_t qc_deviation(ObservationSeries& series, const TimeGrid& grid,
                          const ClimatologyTable& climatology,
                          const QcConfig& cfg);

/// Linear interpolation across interior gaps, window mean at the ends.
/// Returns the number of samples replaced.
std::int64_t fill_gaps(ObservationSeries& series, int end_fill_window);

struct QcResult {
  Dataset dataset;
  QcReport report;
  std::vector<ClimatologyTable> climatology; // final tables, per station
};

/// Two-pass QC: range + fill, provisional climatology, deviation + fill,
/// final climatology over `clim_years` (all years when empty).
QcResult run_qc(Dataset dataset, const QcConfig& cfg,
                const std::vector<int>& clim_years = {},
                const std::vector<std::int64_t>& duplicates = {});

} // namespace tptkit
