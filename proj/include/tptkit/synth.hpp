#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/gridding.hpp"
#include "tptkit/height_adjust.hpp"
#include "tptkit/ingest_qc.hpp"
#include "tptkit/projection.hpp"

namespace tptkit {

struct SynthConfig {
  int n_stations = 366;
  GeoBox box;
  GridSpec grid{32, 32, 20000.0, 760000.0, 1450000.0};
  std::string start = "2021-01-01T00:00Z";
  int step_minutes = 60;
  int days = 365;

  // altitude mixture: coastal exponential plus a mountain normal, clamped
  double coastal_fraction = 0.6;
  double coastal_mean_m = 50.0;
  double mountain_mean_m = 350.0;
  double mountain_sd_m = 220.0;
  double altitude_min_m = 5.0;
  double altitude_max_m = 968.0;
  double min_separation_m = 2000.0;

  double base_temp_c = 13.0;
  double amp_yearly_k = 12.0;
  double amp_daily_k = 4.0;
  double lapse_k_per_m = 0.0065;

  // per-station AR(1) memory, φ = exp(-step / its)
  double its_min_hours = 26.4;
  double its_max_hours = 43.2;
  VariogramModel variogram{VariogramKind::exponential, 0.0, 4.0, 50000.0};
  double noise_sd_k = 0.3;

  double pressure_fraction = 0.3;
  double pressure_noise_hpa = 0.5;
  HeightAdjustModel pressure_model;
  bool humidity = false;

  double nwp_noise_k = 2.0;
  int nwp_lead_hours = 12;
  double corrupt_fraction = 0.005;
  std::uint64_t seed = 20210101;

  TimeGrid time_grid() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Planted components; T = periodic + offset + fluct + noise.
struct SynthTruth {
  std::vector<double> periodic_k; // [t], K, shared by all stations
  std::vector<double> offset_k;   // [s] = -lapse · altitude
  std::vector<double> fluct_k;    // [t][s] AR(1) field
  std::vector<double> noise_k;    // [t][s] i.i.d. measurement noise
  std::vector<double> phi;        // [s]
  Mask land;
};

struct SynthCorpus {
  Dataset dataset;                // uncorrupted, temperatures rounded to 0.01 °C
  SynthTruth truth;
  std::vector<double> pressure_hpa; // [t][s], NaN where a station has none
  std::vector<double> rh_pct;       // [t][s], NaN where absent
  std::vector<double> nwp_c;        // [t][s] valid-time forecasts, NaN before lead
};

/// Analytic peninsula plus a southern island in EPSG:5179 coordinates.
bool synthetic_land_at(const Point2& p);
Mask synthetic_land(const GridSpec& grid);

SynthCorpus generate(const SynthConfig& cfg);

struct CorruptionLog {
  struct Entry {
    std::size_t station = 0;
    std::int64_t t = 0;
  };
  std::vector<Entry> spikes;     // set to 50 °C
  std::vector<Entry> deviations; // shifted by 30 K towards the range centre
  std::vector<Entry> nulls;
  std::size_t total() const { return spikes.size() + deviations.size() + nulls.size(); }
  nlohmann::json to_json() const;
};

/// Deterministically corrupts round(fraction · samples) distinct non-null
/// samples, cycling spike, deviation and null. fraction ∈ [0, 0.05].
CorruptionLog corrupt(Dataset& d, double fraction, std::uint64_t seed,
                      const QcConfig& qc = {});

/// Writes stations.csv, observations.csv, land.pgm, grid.json,
/// external_nwp.csv and synth.json into `dir`. Observations come from `d`
/// so a corrupted copy can be written.
void write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg,
                  const SynthCorpus& corpus, const Dataset& d);

} // namespace tptkit
