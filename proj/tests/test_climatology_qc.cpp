#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "tptkit/climatology.hpp"
#include "tptkit/error.hpp"
#include "tptkit/height_adjust.hpp"
#include "tptkit/ingest_qc.hpp"
#include "tptkit/rng.hpp"

using namespace tptkit;

namespace {

ObservationSeries series_from(const TimeGrid& g, double (*f)(const TimeGrid&, std::int64_t)) {
  std::vector<double> v(static_cast<std::size_t>(g.count()));
  for (std::int64_t i = 0; i < g.count(); ++i) v[static_cast<std::size_t>(i)] = f(g, i);
  return ObservationSeries::make("s", std::move(v));
}

ClimatologyTable flat_table(double value, int step = 60) {
  ClimatologyTable t;
  t.station_id = "s";
  t.step_minutes = step;
  t.mean_k.assign(static_cast<std::size_t>(366 * (1440 / step)), value);
  t.counts.assign(t.mean_k.size(), 1);
  return t;
}

constexpr double kTwoPi = 2.0 * std::numbers::pi;

} // namespace

TEST_CASE("constant series gives a constant climatology") {
  TimeGrid g(make_time(2021, 1, 1), 60, 24 * 365);
  auto s = series_from(g, [](const TimeGrid&, std::int64_t) { return 290.0; });
  auto t = compute_climatology(s, g);
  for (double v : t.mean_k) CHECK(v == doctest::Approx(290.0).epsilon(1e-14));
  auto tp = decompose(s.values, g, t);
  for (double v : tp) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("seasonal sinusoid matches its 21-day boxcar average") {
  TimeGrid g(make_time(2020, 1, 1), 60, 24 * (366 + 365 * 3));
  auto s = series_from(g, [](const TimeGrid& gr, std::int64_t i) {
    return 283.15 + 10.0 * std::sin(kTwoPi * gr.to_calendar(i).day_of_year / 365.25);
  });
  auto t = compute_climatology(s, g, 21);
  // boxcar of sin(ω·d) over ±10 days is sin(ω·d)·Σcos(ω·o)/21
  double k = 0.0;
  for (int o = -10; o <= 10; ++o) k += std::cos(kTwoPi * o / 365.25);
  k /= 21.0;
  double worst = 0.0;
  for (int slot = 0; slot < 366; ++slot) {
    if (slot == 59) continue;
    auto [m, d] = slot_month_day(slot);
    double expect = 0.0;
    int years = 0;
    for (int y = 2020; y <= 2023; ++y) {
      int doy = (make_time(y, m, d) - make_time(y, 1, 1)).count() / 1440 + 1;
      expect += 283.15 + 10.0 * k * std::sin(kTwoPi * doy / 365.25);
      ++years;
    }
    expect /= years;
    worst = std::max(worst, std::abs(t.at(slot, 12) - expect));
  }
  CHECK(worst <= 0.05);
}

TEST_CASE("twenty years with a 21-day window average 420 samples per slot") {
  TimeGrid g(make_time(2000, 1, 1), 1440, 7305);
  auto s = series_from(g, [](const TimeGrid&, std::int64_t i) { return 280.0 + (i % 7); });
  auto t = compute_climatology(s, g, 21);
  for (int slot = 0; slot < 366; ++slot) {
    if (slot == 59) CHECK(t.counts[59] == 5 * 21);
    else CHECK(t.counts[static_cast<std::size_t>(slot)] == 420);
  }
}

TEST_CASE("decompose and recompose are inverse") {
  TimeGrid g(make_time(2021, 1, 1), 60, 24 * 365);
  Rng rng(4);
  std::vector<double> v(static_cast<std::size_t>(g.count()));
  for (auto& x : v) x = 280.0 + rng.normal(0.0, 3.0);
  auto t = compute_climatology(ObservationSeries::make("s", v), g);
  auto tp = decompose(v, g, t);
  auto back = recompose(tp, g, t);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == doctest::Approx(v[i]).epsilon(1e-14));

  std::vector<double> shifted(v.size());
  for (std::int64_t i = 0; i < g.count(); ++i)
    shifted[static_cast<std::size_t>(i)] = t.at(g, i) + 3.0;
  for (double x : decompose(shifted, g, t)) CHECK(x == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("fluctuations of random series average to zero per slot") {
  TimeGrid g(make_time(2001, 1, 1), 360, 4 * 365 * 8);
  Rng rng(9);
  std::vector<double> v(static_cast<std::size_t>(g.count()));
  for (auto& x : v) x = 285.0 + rng.normal(0.0, 2.0);
  auto t = compute_climatology(ObservationSeries::make("s", v), g);
  auto tp = decompose(v, g, t);
  std::vector<double> sum(366 * 4, 0.0);
  std::vector<int> n(sum.size(), 0);
  for (std::int64_t i = 0; i < g.count(); ++i) {
    auto [d, tod] = g.clim_slot(i);
    sum[static_cast<std::size_t>(d * 4 + tod)] += tp[static_cast<std::size_t>(i)];
    ++n[static_cast<std::size_t>(d * 4 + tod)];
  }
  // 1464 slots: about 0.3 % may exceed 3σ/√N by chance, none should reach 5σ/√N
  int slots = 0, outside = 0;
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (n[k] == 0) continue;
    double z = std::abs(sum[k] / n[k]) / (2.0 / std::sqrt(n[k]));
    ++slots;
    outside += z > 3.0;
    CHECK(z < 5.0);
  }
  CHECK(outside <= slots / 100);
}

TEST_CASE("climatology rejects less than a year and even windows") {
  TimeGrid g(make_time(2021, 1, 1), 60, 24 * 300);
  auto s = series_from(g, [](const TimeGrid&, std::int64_t) { return 1.0; });
  CHECK_THROWS_AS(compute_climatology(s, g), ConfigError);
  TimeGrid y(make_time(2021, 1, 1), 60, 24 * 365);
  auto sy = series_from(y, [](const TimeGrid&, std::int64_t) { return 1.0; });
  CHECK_THROWS_AS(compute_climatology(sy, y, 20), ConfigError);
}

TEST_CASE("climatology forecast is zero and its RMSE is the fluctuation std") {
  Rng rng(2);
  std::vector<double> x(20000);
  for (auto& v : x) v = rng.normal(0.0, 1.0);
  auto z = climatology_forecast(x.size());
  double s2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(z[i] == 0.0);
    s2 += (x[i] - z[i]) * (x[i] - z[i]);
  }
  CHECK(std::sqrt(s2 / static_cast<double>(x.size())) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("climatology tables survive the csv round trip") {
  TimeGrid g(make_time(2021, 1, 1), 60, 24 * 365);
  auto s = series_from(g, [](const TimeGrid& gr, std::int64_t i) {
    return 280.0 + std::sin(static_cast<double>(i) / 100.0) + gr.to_calendar(i).hour * 0.1;
  });
  auto t = compute_climatology(s, g);
  auto path = std::filesystem::temp_directory_path() / "tptkit_clim_rt.csv";
  write_climatology_csv(path, t);
  auto back = read_climatology_csv(path, "s");
  REQUIRE(back.mean_k.size() == t.mean_k.size());
  for (std::size_t k = 0; k < t.mean_k.size(); ++k) CHECK(back.mean_k[k] == t.mean_k[k]);
  std::filesystem::remove(path);
}

TEST_CASE("pressure model fit recovers the scale height") {
  std::vector<double> z{0, 200, 500, 968};
  std::vector<double> p;
  for (double zz : z) p.push_back(1000.0 * std::exp(-zz / 8434.0));
  CHECK(fit_pressure_model(z, p).scale_height_m == doctest::Approx(8434.0).epsilon(1e-3));

  Rng rng(5);
  std::vector<double> zn, pn;
  for (int i = 0; i < 300; ++i) {
    double zz = rng.uniform(0.0, 1000.0);
    zn.push_back(zz);
    pn.push_back(1000.0 * std::exp(-zz / 8434.0) + rng.normal(0.0, 1.0));
  }
  CHECK(fit_pressure_model(zn, pn).scale_height_m == doctest::Approx(8434.0).epsilon(0.02));

  std::vector<double> z1{0.0}, p1{1000.0};
  CHECK_THROWS_AS(fit_pressure_model(z1, p1), DegenerateError);
}

TEST_CASE("potential temperature factor") {
  HeightAdjustModel m;
  CHECK(m.factor(0.0) == 1.0);
  CHECK(to_potential(1.7, 0.0, m) == 1.7);
  double f = std::pow(std::exp(1000.0 / 8434.0), 0.2857);
  CHECK(m.factor(1000.0) == doctest::Approx(f).epsilon(1e-12));
  CHECK(to_potential(2.0, 1000.0, m) == doctest::Approx(2.0690).epsilon(1e-3));
  CHECK(to_potential(0.0, 700.0, m) == 0.0);
  CHECK(from_potential(to_potential(-3.2, 640.0, m), 640.0, m) == doctest::Approx(-3.2).epsilon(1e-14));
}

TEST_CASE("ingest builds series on the time grid") {
  std::istringstream meta("id,lat,lon,altitude_m\n1,37.5,127.0,40\n2,36.0,128.0,120\n");
  std::ostringstream obs;
  obs << "timestamp_utc,station_id,temp_c\n";
  TimeGrid g(make_time(2021, 6, 1), 60, 24);
  for (int h = 0; h < 24; ++h)
    for (int s = 1; s <= 2; ++s) obs << format_timestamp(g.time_at(h)) << ',' << s << ',' << h * 0.5 << '\n';
  std::istringstream in(obs.str());
  auto r = ingest(meta, in, g);
  REQUIRE(r.dataset.series.size() == 2);
  CHECK(r.dataset.series[0].size() == 24);
  CHECK(r.dataset.series[1].values[10] == doctest::Approx(celsius_to_kelvin(5.0)));
  CHECK(r.dataset.stations[0].easting > 0.0);
}

TEST_CASE("ingest names unknown stations and keeps the last duplicate") {
  TimeGrid g(make_time(2021, 6, 1), 60, 3);
  {
    std::istringstream meta("id,lat,lon,altitude_m\n1,37.5,127.0,40\n");
    std::istringstream obs("timestamp_utc,station_id,temp_c\n2021-06-01T00:00Z,999,3\n");
    try {
      ingest(meta, obs, g);
      FAIL("expected an error");
    } catch (const IngestError& e) {
      CHECK(std::string(e.what()).find("999") != std::string::npos);
    }
  }
  std::istringstream meta("id,lat,lon,altitude_m\n1,37.5,127.0,40\n");
  std::istringstream obs(
      "timestamp_utc,station_id,temp_c\n2021-06-01T01:00Z,1,3\n2021-06-01T01:00Z,1,4\n");
  auto r = ingest(meta, obs, g);
  CHECK(r.duplicates[0] == 1);
  CHECK(r.dataset.series[0].values[1] == doctest::Approx(celsius_to_kelvin(4.0)));
  CHECK(std::isnan(r.dataset.series[0].values[0]));

  std::istringstream meta2("id,lat,lon,altitude_m\n1,37.5,127.0,40\n");
  std::istringstream bad("timestamp_utc,station_id,temp_c\n2021-06-01T01:00Z,1\n");
  try {
    ingest(meta2, bad, g);
    FAIL("expected an error");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("range check bounds") {
  auto s = ObservationSeries::make(
      "s", {celsius_to_kelvin(45.0), celsius_to_kelvin(-40.0), celsius_to_kelvin(20.0)});
  CHECK(qc_range(s, QcConfig{}) == 2);
  CHECK(std::isnan(s.values[0]));
  CHECK(std::isnan(s.values[1]));
  CHECK(s.values[2] == celsius_to_kelvin(20.0));
}

TEST_CASE("deviation check is strict at the threshold") {
  TimeGrid g(make_time(2021, 1, 1), 60, 4);
  auto t = flat_table(280.0);
  auto s = ObservationSeries::make("s", {305.0, 280.0 - 19.9, 300.0, 281.0});
  CHECK(qc_deviation(s, g, t, QcConfig{}) == 1);
  CHECK(std::isnan(s.values[0]));
  CHECK(std::isfinite(s.values[1]));
  CHECK(std::isfinite(s.values[2]));

  auto bad = flat_table(280.0);
  bad.mean_k[0] = NAN;
  auto s2 = ObservationSeries::make("s", {281.0, 281.0, 281.0, 281.0});
  CHECK_THROWS_AS(qc_deviation(s2, g, bad, QcConfig{}), ConfigError);
}

TEST_CASE("gap filling") {
  auto a = ObservationSeries::make("a", {10.0, NAN, 14.0});
  CHECK(fill_gaps(a, 60) == 1);
  CHECK(a.values[1] == doctest::Approx(12.0));
  CHECK(a.flags[1] != SampleFlag::raw);

  auto b = ObservationSeries::make("b", {NAN, 8.0, 8.0, 8.0});
  CHECK(fill_gaps(b, 3) == 1);
  CHECK(b.values[0] == 8.0);

  auto c = ObservationSeries::make("c", {1.0, 2.0});
  CHECK(fill_gaps(c, 3) == 0);
  CHECK(c.values == std::vector<double>{1.0, 2.0});

  auto d = ObservationSeries::make("d", {NAN, NAN});
  CHECK_THROWS_AS(fill_gaps(d, 3), UnrecoverableSeriesError);
}

TEST_CASE("qc config validation") {
  QcConfig c;
  c.min_temp_c = 50.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
