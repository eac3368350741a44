#include "doctest.h"

#include <cmath>
#include <sstream>

#include "tptkit/error.hpp"
#include "tptkit/evaluate.hpp"
#include "tptkit/rng.hpp"

using namespace tptkit;

namespace {

Dataset make_truth(int stations, int hours, Rng& rng) {
  Dataset d;
  d.grid = TimeGrid(make_time(2021, 1, 1), 60, hours);
  for (int s = 0; s < stations; ++s) {
    StationMeta m;
    m.id = "st" + std::to_string(s);
    m.easting = 1000000.0 + 4000.0 * s;
    m.northing = 1900000.0;
    d.stations.push_back(m);
    std::vector<double> v(static_cast<std::size_t>(hours));
    for (auto& x : v) x = 280.0 + rng.normal(0.0, 3.0);
    d.series.push_back(ObservationSeries::make(m.id, v));
  }
  return d;
}

} // namespace

TEST_CASE("station RMSE by hand and against a double loop") {
  std::vector<double> clim{0.0, 0.0}, pred{1.0, 2.0}, truth{0.0, 0.0};
  CHECK(rmse_station(pred, truth, clim) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK(rmse_station(truth, truth, clim) == 0.0);

  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t n = 5 + rng.below(200);
    std::vector<double> p(n), t(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.normal();
      t[i] = 280 + rng.normal(0, 4);
      c[i] = 279 + rng.normal();
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (c[i] + p[i] - t[i]) * (c[i] + p[i] - t[i]);
    double oracle = std::sqrt(s / static_cast<double>(n));
    CHECK(rmse_station(p, t, c) == doctest::Approx(oracle).epsilon(1e-12));
  }
  std::vector<double> shorter{1.0};
  CHECK_THROWS_AS(rmse_station(shorter, truth, clim), ShapeError);
}

TEST_CASE("climatology baseline RMSE is the RMS of the fluctuation") {
  Rng rng(2);
  std::vector<double> clim(500), truth(500), zero(500, 0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < 500; ++i) {
    clim[i] = 280.0 + std::sin(i * 0.1);
    double tp = rng.normal(0.0, 2.0);
    truth[i] = clim[i] + tp;
    s += tp * tp;
  }
  CHECK(rmse_station(zero, truth, clim) == doctest::Approx(std::sqrt(s / 500.0)).epsilon(1e-12));
}

TEST_CASE("aggregate RMSE is the plain mean") {
  CHECK(rmse_aggregate(std::vector<double>{2.21}) == 2.21);
  CHECK(rmse_aggregate(std::vector<double>{1.0, 3.0}) == 2.0);
  Rng rng(4);
  std::vector<double> v(37);
  double s = 0.0;
  for (auto& x : v) {
    x = rng.uniform(0.5, 3.0);
    s += x;
  }
  CHECK(rmse_aggregate(v) == s / 37.0);
  CHECK_THROWS_AS(rmse_aggregate(std::vector<double>{}), InputError);
}

TEST_CASE("mesh RMSE against a double loop") {
  const std::size_t nodes = 64, steps = 30;
  Mask inland(nodes, 0);
  for (std::size_t k = 0; k < nodes; ++k) inland[k] = (k % 3 != 0);
  Rng rng(5);
  std::vector<double> p(nodes * steps), t(nodes * steps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.normal();
    t[i] = rng.normal();
  }
  double outer = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < nodes; ++k) {
    if (!inland[k]) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < steps; ++j) s += std::pow(p[j * nodes + k] - t[j * nodes + k], 2);
    outer += std::sqrt(s / steps);
    ++n;
  }
  CHECK(rmse_mesh(p, t, inland, steps) == doctest::Approx(outer / n).epsilon(1e-12));
  CHECK(rmse_mesh(t, t, inland, steps) == 0.0);
  auto shifted = t;
  for (auto& x : shifted) x += 0.7;
  CHECK(rmse_mesh(shifted, t, inland, steps) == doctest::Approx(0.7).epsilon(1e-12));
  Mask wrong(nodes - 1, 1);
  CHECK_THROWS(rmse_mesh(p, t, wrong, steps));
  Mask none(nodes, 0);
  CHECK_THROWS_AS(rmse_mesh(p, t, none, steps), ConfigError);
}

TEST_CASE("monthly slices") {
  TimeGrid g(make_time(2021, 1, 1), 60, 24 * 365);
  std::vector<std::int64_t> jan;
  for (int i = 0; i < 24 * 31; ++i) jan.push_back(i);
  std::vector<double> r(jan.size() * 2, 1.0);
  auto rows = slice_monthly(g, jan, r, 2);
  int empty = 0;
  for (const auto& m : rows) empty += m.empty;
  CHECK(empty == 11);
  CHECK(rows[0].rmse == doctest::Approx(1.0));

  std::vector<std::int64_t> all;
  for (std::int64_t i = 0; i < g.count(); ++i) all.push_back(i);
  std::vector<double> u(all.size(), 2.0);
  for (const auto& m : slice_monthly(g, all, u, 1)) CHECK(m.rmse == doctest::Approx(2.0));

  Rng rng(3);
  std::vector<double> seasonal(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    int month = g.month_of(all[i]);
    seasonal[i] = rng.normal(0.0, (month >= 6 && month <= 8) ? 3.0 : 1.0);
  }
  auto sr = slice_monthly(g, all, seasonal, 1);
  for (int summer : {5, 6, 7})
    for (int winter : {0, 1, 11}) CHECK(sr[summer].rmse > sr[winter].rmse);
}

TEST_CASE("density counts neighbours in the radius") {
  std::vector<StationMeta> st(30);
  st[0].easting = 0;
  st[0].northing = 0;
  Rng rng(7);
  for (std::size_t i = 1; i < 23; ++i) {
    double a = rng.uniform(0, 6.28), r = rng.uniform(0, 29000);
    st[i].easting = 500000 + r * std::cos(a);
    st[i].northing = 500000 + r * std::sin(a);
  }
  st[1].easting = 500000;
  st[1].northing = 500000;
  for (std::size_t i = 23; i < 30; ++i) {
    st[i].easting = 900000 + 1000.0 * static_cast<double>(i);
    st[i].northing = 900000;
  }
  for (std::size_t i = 0; i < st.size(); ++i) st[i].id = std::to_string(i);
  std::vector<double> rmse(30, 1.0), its(30, 30.0);
  auto rows = scatter_extract(st, rmse, its, 30.0);
  CHECK(rows[0].density == 0);
  for (std::size_t i = 0; i < st.size(); ++i) {
    int n = 0;
    for (std::size_t j = 0; j < st.size(); ++j)
      if (j != i && std::hypot(st[i].easting - st[j].easting, st[i].northing - st[j].northing) <= 30000.0)
        ++n;
    CHECK(rows[i].density == n);
  }
  CHECK(rows[1].density == 21);
}

TEST_CASE("best and worst instances") {
  CHECK(best_worst(std::vector<double>{0.7}).best == 0);
  CHECK(best_worst(std::vector<double>{0.7}).worst == 0);
  auto bw = best_worst(std::vector<double>{1.0, 2.0, 0.0, 3.0, 3.0, 0.0});
  CHECK(bw.best == 2);
  CHECK(bw.worst == 3);
  CHECK_THROWS_AS(best_worst(std::vector<double>{}), InputError);
}

TEST_CASE("forecast files against the truth") {
  Rng rng(11);
  auto truth = make_truth(4, 48, rng);
  std::vector<std::int64_t> times;
  for (int t = 12; t < 48; ++t) times.push_back(t);
  const std::size_t S = 4;

  std::vector<double> perfect(times.size() * S);
  for (std::size_t k = 0; k < times.size(); ++k)
    for (std::size_t s = 0; s < S; ++s) perfect[k * S + s] = truth.series[s].values[static_cast<std::size_t>(times[k])];
  std::ostringstream out;
  auto path = std::filesystem::temp_directory_path() / "tptkit_fc.csv";
  write_forecast_csv(path, truth, 12, perfect, times);
  auto tab = read_forecast_csv(path, truth, 12);
  auto r = evaluate_forecast("perfect", tab, truth, times);
  CHECK(r.rmse < 1e-4);
  CHECK(r.coverage == 1.0);
  CHECK(read_forecast_csv(path, truth, 6).rows_unmatched == tab.rows);

  std::vector<double> noisy = perfect;
  for (auto& x : noisy) x += rng.normal(0.0, 2.0);
  noisy[0] = NAN;
  write_forecast_csv(path, truth, 12, noisy, times);
  auto rn = evaluate_forecast("noisy", read_forecast_csv(path, truth, 12), truth, times);
  CHECK(rn.coverage == doctest::Approx(1.0 - 1.0 / static_cast<double>(noisy.size())));
  for (std::size_t s = 0; s < S; ++s) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (std::isnan(noisy[k * S + s])) continue;
      double e = std::round((noisy[k * S + s] - 273.15) * 1e4) / 1e4 + 273.15 -
                 truth.series[s].values[static_cast<std::size_t>(times[k])];
      sum += e * e;
      ++n;
    }
    CHECK(rn.rmse_station[s] == doctest::Approx(std::sqrt(sum / n)).epsilon(1e-9));
  }
  std::filesystem::remove(path);
}

TEST_CASE("planted NWP noise shows up in the aggregate") {
  Rng rng(19);
  auto truth = make_truth(50, 24 * 40, rng);
  std::ostringstream csv;
  csv << "timestamp_utc,station_id,lead_h,temp_c\n";
  std::vector<std::int64_t> times;
  for (std::int64_t t = 0; t < truth.grid.count(); ++t) {
    times.push_back(t);
    for (std::size_t s = 0; s < 50; ++s)
      csv << format_timestamp(truth.grid.time_at(t)) << ',' << truth.stations[s].id << ",12,"
          << kelvin_to_celsius(truth.series[s].values[static_cast<std::size_t>(t)] + rng.normal(0.0, 2.0))
          << '\n';
  }
  csv << "2021-01-01T00:00Z,unknown,12,3.0\n";
  std::istringstream in(csv.str());
  auto tab = read_forecast_csv(in, truth, 12);
  CHECK(tab.rows_unmatched == 1);
  auto r = evaluate_forecast("nwp", tab, truth, times);
  CHECK(r.rmse == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("report json marks empty months") {
  Rng rng(1);
  auto truth = make_truth(2, 24 * 5, rng);
  std::vector<std::int64_t> times{0, 1, 2};
  ForecastTable t;
  t.temp_k.assign(static_cast<std::size_t>(truth.grid.count()) * 2, 280.0);
  auto r = evaluate_forecast("x", t, truth, times);
  auto j = r.to_json();
  CHECK(j["monthly"][3]["rmse"].is_null());
  CHECK(j["monthly"][0]["empty"] == false);
}
