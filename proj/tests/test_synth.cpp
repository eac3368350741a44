#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tptkit/error.hpp"
#include "tptkit/ingest_qc.hpp"
#include "tptkit/synth.hpp"

using namespace tptkit;

namespace {

SynthConfig small_config(int stations = 30, int days = 20) {
  SynthConfig c;
  c.n_stations = stations;
  c.days = days;
  return c;
}

} // namespace

TEST_CASE("degenerate config gives a constant series offset by the lapse rate") {
  SynthConfig c = small_config(12, 3);
  c.amp_yearly_k = c.amp_daily_k = 0.0;
  c.noise_sd_k = 0.0;
  c.variogram.sill = 0.0;
  c.its_min_hours = c.its_max_hours = 0.0;
  auto g = generate(c);
  for (std::size_t s = 0; s < g.dataset.series.size(); ++s) {
    CHECK(g.truth.phi[s] == 0.0);
    double z = g.dataset.stations[s].altitude;
    double expect = celsius_to_kelvin(c.base_temp_c - c.lapse_k_per_m * z);
    for (double v : g.dataset.series[s].values) {
      CHECK(std::abs(v - expect) <= 0.005 + 1e-9);
    }
  }
}

TEST_CASE("generated series are the sum of the planted components") {
  auto c = small_config();
  auto g = generate(c);
  std::size_t S = g.dataset.stations.size();
  for (std::int64_t t = 0; t < g.dataset.grid.count(); t += 37) {
    for (std::size_t s = 0; s < S; ++s) {
      auto k = static_cast<std::size_t>(t) * S + s;
      double sum = g.truth.periodic_k[static_cast<std::size_t>(t)] + g.truth.offset_k[s] +
                   g.truth.fluct_k[k] + g.truth.noise_k[k];
      CHECK(std::abs(g.dataset.series[s].values[static_cast<std::size_t>(t)] - sum) <=
            0.005 + 1e-9);
    }
  }
  for (const auto& m : g.dataset.stations) {
    CHECK(m.altitude >= c.altitude_min_m);
    CHECK(m.altitude <= c.altitude_max_m);
    CHECK(synthetic_land_at({m.easting, m.northing}));
  }
  for (double phi : g.truth.phi) {
    CHECK(phi > 0.0);
    CHECK(phi < 1.0);
  }
}

TEST_CASE("identical config and seed reproduce the corpus") {
  auto a = generate(small_config());
  auto b = generate(small_config());
  CHECK(a.truth.fluct_k == b.truth.fluct_k);
  for (std::size_t s = 0; s < a.dataset.series.size(); ++s) {
    CHECK(a.dataset.series[s].values == b.dataset.series[s].values);
  }
  auto c = small_config();
  c.seed += 1;
  auto d = generate(c);
  CHECK(d.truth.fluct_k != a.truth.fluct_k);
}

TEST_CASE("station pair correlation at 50 km matches the AR(1) cross correlation") {
  SynthConfig c = small_config(200, 120);
  c.noise_sd_k = 0.0;
  auto g = generate(c);
  std::size_t S = g.dataset.stations.size();
  auto T = static_cast<std::size_t>(g.dataset.grid.count());
  double emp = 0.0, ana = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < S; ++a) {
    for (std::size_t b = a + 1; b < S; ++b) {
      const auto& ma = g.dataset.stations[a];
      const auto& mb = g.dataset.stations[b];
      double d = std::hypot(ma.easting - mb.easting, ma.northing - mb.northing);
      if (d < 45000.0 || d > 55000.0) continue;
      double sab = 0, saa = 0, sbb = 0;
      for (std::size_t t = 0; t < T; ++t) {
        double x = g.truth.fluct_k[t * S + a], y = g.truth.fluct_k[t * S + b];
        sab += x * y;
        saa += x * x;
        sbb += y * y;
      }
      emp += sab / std::sqrt(saa * sbb);
      double pa = g.truth.phi[a], pb = g.truth.phi[b];
      double rho = 1.0 - c.variogram(d) / c.variogram.sill;
      ana += rho * std::sqrt((1 - pa * pa) * (1 - pb * pb)) / (1 - pa * pb);
      ++pairs;
    }
  }
  REQUIRE(pairs > 100);
  emp /= pairs;
  ana /= pairs;
  CHECK(emp == doctest::Approx(ana).epsilon(0.15));
}

TEST_CASE("corrupt with zero fraction is the identity") {
  auto g = generate(small_config());
  Dataset d = g.dataset;
  auto log = corrupt(d, 0.0, 5);
  CHECK(log.total() == 0);
  for (std::size_t s = 0; s < d.series.size(); ++s) {
    CHECK(d.series[s].values == g.dataset.series[s].values);
  }
  CHECK_THROWS_AS(corrupt(d, 0.06, 5), ConfigError);
}

TEST_CASE("injected spikes are flagged by the range check") {
  auto g = generate(small_config(5, 5));
  Dataset d = g.dataset;
  auto log = corrupt(d, 0.01, 9);
  REQUIRE(!log.spikes.empty());
  const auto& e = log.spikes.front();
  CHECK(d.series[e.station].values[static_cast<std::size_t>(e.t)] ==
        doctest::Approx(celsius_to_kelvin(50.0)));
  auto series = d.series[e.station];
  CHECK(qc_range(series, QcConfig{}) >= 1);
  CHECK(std::isnan(series.values[static_cast<std::size_t>(e.t)]));
}

TEST_CASE("half a percent of corruption is repaired by QC") {
  auto g = generate(small_config(40, 365));
  Dataset d = g.dataset;
  auto log = corrupt(d, 0.005, 11);
  auto samples = static_cast<double>(d.series.size()) * static_cast<double>(d.grid.count());
  CHECK(static_cast<double>(log.total()) == doctest::Approx(0.005 * samples).epsilon(0.01));
  auto qc = run_qc(d, QcConfig{});
  CHECK(qc.report.replaced_fraction >= 0.004);
  CHECK(qc.report.replaced_fraction <= 0.006);
  for (const auto* list : {&log.spikes, &log.deviations, &log.nulls}) {
    for (const auto& e : *list) {
      const auto& s = qc.dataset.series[e.station];
      CHECK(s.flags[static_cast<std::size_t>(e.t)] != SampleFlag::raw);
      CHECK(std::isfinite(s.values[static_cast<std::size_t>(e.t)]));
    }
  }
}

TEST_CASE("write_corpus emits readable files") {
  auto c = small_config(8, 2);
  auto g = generate(c);
  auto dir = std::filesystem::temp_directory_path() / "tptkit_synth_test";
  std::filesystem::remove_all(dir);
  write_corpus(dir, c, g, g.dataset);
  for (const char* f : {"stations.csv", "observations.csv", "external_nwp.csv", "land.pgm",
                        "grid.json", "synth.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  auto back = ingest(dir / "stations.csv", dir / "observations.csv", c.time_grid());
  REQUIRE(back.dataset.series.size() == g.dataset.series.size());
  for (std::size_t s = 0; s < g.dataset.series.size(); ++s) {
    for (std::size_t t = 0; t < g.dataset.series[s].size(); ++t) {
      CHECK(back.dataset.series[s].values[t] ==
            doctest::Approx(g.dataset.series[s].values[t]).epsilon(1e-12));
    }
  }
  auto cfg = SynthConfig::from_json(nlohmann::json::parse(std::ifstream(dir / "synth.json")));
  CHECK(cfg.n_stations == c.n_stations);
  std::filesystem::remove_all(dir);
}
