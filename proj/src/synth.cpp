#include "tptkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"
#include "tptkit/parallel.hpp"
#include "tptkit/rng.hpp"

namespace tptkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::int64_t kBlock = 512;

enum Stream : std::uint64_t {
  kStations = 1,
  kPhi = 2,
  kNwp = 3,
  kPressure = 4,
  kHumidity = 5,
  kInnovation = 1000,
  kNoise = 1000000,
};

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

std::size_t uz(std::int64_t v) { return static_cast<std::size_t>(v); }

} // namespace

TimeGrid SynthConfig::time_grid() const {
  return TimeGrid(parse_timestamp(start), step_minutes,
                  static_cast<std::int64_t>(days) * (1440 / step_minutes));
}

void SynthConfig::validate() const {
  if (n_stations < 1) {
    throw ConfigError("synth: n_stations must be positive");
  }
  if (days < 1 || step_minutes < 1 || 1440 % step_minutes != 0) {
    throw ConfigError("synth: days must be positive and step must divide a day");
  }
  if (!(its_min_hours >= 0.0) || its_max_hours < its_min_hours) {
    throw ConfigError("synth: ITS range must be non-negative and ordered");
  }
  if (!(variogram.sill >= 0.0)) {
    throw ConfigError("synth: variogram sill must be non-negative");
  }
  variogram.validate();
  if (!(noise_sd_k >= 0.0) || !(nwp_noise_k >= 0.0)) {
    throw ConfigError("synth: noise levels must be non-negative");
  }
  if (!(corrupt_fraction >= 0.0 && corrupt_fraction <= 0.05)) {
    throw ConfigError("synth: corrupt_fraction must lie in [0, 0.05]");
  }
  if (!(pressure_fraction >= 0.0 && pressure_fraction <= 1.0) ||
      !(coastal_fraction >= 0.0 && coastal_fraction <= 1.0)) {
    throw ConfigError("synth: fractions must lie in [0, 1]");
  }
  if (altitude_min_m < 0.0 || altitude_max_m < altitude_min_m) {
    throw ConfigError("synth: altitude bounds must be non-negative and ordered");
  }
  if (nwp_lead_hours < 0 || (nwp_lead_hours * 60) % step_minutes != 0) {
    throw ConfigError("synth: nwp lead must be a multiple of the step");
  }
  time_grid();
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_stations", n_stations},
          {"box",
           {{"lat_min", box.lat_min},
            {"lat_max", box.lat_max},
            {"lon_min", box.lon_min},
            {"lon_max", box.lon_max}}},
          {"grid", grid.to_json()},
          {"start", start},
          {"step_minutes", step_minutes},
          {"days", days},
          {"coastal_fraction", coastal_fraction},
          {"coastal_mean_m", coastal_mean_m},
          {"mountain_mean_m", mountain_mean_m},
          {"mountain_sd_m", mountain_sd_m},
          {"altitude_min_m", altitude_min_m},
          {"altitude_max_m", altitude_max_m},
          {"min_separation_m", min_separation_m},
          {"base_temp_c", base_temp_c},
          {"amp_yearly_k", amp_yearly_k},
          {"amp_daily_k", amp_daily_k},
          {"lapse_k_per_m", lapse_k_per_m},
          {"its_min_hours", its_min_hours},
          {"its_max_hours", its_max_hours},
          {"variogram", variogram.to_json()},
          {"noise_sd_k", noise_sd_k},
          {"pressure_fraction", pressure_fraction},
          {"pressure_noise_hpa", pressure_noise_hpa},
          {"pressure_model", pressure_model.to_json()},
          {"humidity", humidity},
          {"nwp_noise_k", nwp_noise_k},
          {"nwp_lead_hours", nwp_lead_hours},
          {"corrupt_fraction", corrupt_fraction},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  if (j.contains("box")) {
    const auto& b = j.at("box");
    c.box.lat_min = b.value("lat_min", c.box.lat_min);
    c.box.lat_max = b.value("lat_max", c.box.lat_max);
    c.box.lon_min = b.value("lon_min", c.box.lon_min);
    c.box.lon_max = b.value("lon_max", c.box.lon_max);
  }
  if (j.contains("grid")) {
    c.grid = GridSpec::from_json(j.at("grid"));
  }
  if (j.contains("variogram")) {
    c.variogram = VariogramModel::from_json(j.at("variogram"));
  }
  if (j.contains("pressure_model")) {
    c.pressure_model = HeightAdjustModel::from_json(j.at("pressure_model"));
  }
#define TPTKIT_READ(key) c.key = j.value(#key, c.key)
  TPTKIT_READ(n_stations);
  TPTKIT_READ(start);
  TPTKIT_READ(step_minutes);
  TPTKIT_READ(days);
  TPTKIT_READ(coastal_fraction);
  TPTKIT_READ(coastal_mean_m);
  TPTKIT_READ(mountain_mean_m);
  TPTKIT_READ(mountain_sd_m);
  TPTKIT_READ(altitude_min_m);
  TPTKIT_READ(altitude_max_m);
  TPTKIT_READ(min_separation_m);
  TPTKIT_READ(base_temp_c);
  TPTKIT_READ(amp_yearly_k);
  TPTKIT_READ(amp_daily_k);
  TPTKIT_READ(lapse_k_per_m);
  TPTKIT_READ(its_min_hours);
  TPTKIT_READ(its_max_hours);
  TPTKIT_READ(noise_sd_k);
  TPTKIT_READ(pressure_fraction);
  TPTKIT_READ(pressure_noise_hpa);
  TPTKIT_READ(humidity);
  TPTKIT_READ(nwp_noise_k);
  TPTKIT_READ(nwp_lead_hours);
  TPTKIT_READ(corrupt_fraction);
  TPTKIT_READ(seed);
#undef TPTKIT_READ
  c.validate();
  return c;
}

bool synthetic_land_at(const Point2& p) {
  const double s0 = 1660000.0, s1 = 2065000.0;
  if (p.y >= s0 && p.y <= s1) {
    const double centre = 1040000.0 + 0.2 * (p.y - 1870000.0);
    const double half = 120000.0 + 20000.0 * std::sin(2.0 * M_PI * (p.y - s0) / (s1 - s0));
    if (std::abs(p.x - centre) <= half) {
      return true;
    }
  }
  const double ex = (p.x - 910000.0) / 40000.0;
  const double ey = (p.y - 1500000.0) / 18000.0;
  return ex * ex + ey * ey <= 1.0;
}

Mask synthetic_land(const GridSpec& grid) {
  Mask m(grid.size(), 0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    m[k] = synthetic_land_at(grid.node(k)) ? 1 : 0;
  }
  return m;
}

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const TimeGrid tg = cfg.time_grid();
  const std::int64_t T = tg.count();
  const std::size_t S = static_cast<std::size_t>(cfg.n_stations);

  SynthCorpus out;
  out.truth.land = synthetic_land(cfg.grid);

  // stations: uniform on land inside the grid, with a minimum separation
  Rng rs(Rng::derive(cfg.seed, kStations));
  const double e0 = cfg.grid.origin_e, e1 = e0 + (cfg.grid.nx - 1) * cfg.grid.dx;
  const double n0 = cfg.grid.origin_n, n1 = n0 + (cfg.grid.ny - 1) * cfg.grid.dx;
  std::vector<Point2> pts;
  std::int64_t attempts = 0;
  while (pts.size() < S) {
    if (++attempts > 1000000) {
      throw ConfigError("synth: cannot place stations; land area too small for "
                        "the requested count and separation");
    }
    const Point2 p{rs.uniform(e0, e1), rs.uniform(n0, n1)};
    if (!synthetic_land_at(p)) {
      continue;
    }
    const auto [lat, lon] = unproject(p.x, p.y);
    if (!cfg.box.contains(lat, lon)) {
      continue;
    }
    bool ok = true;
    for (const auto& q : pts) {
      if (distance(p, q) < cfg.min_separation_m) {
        ok = false;
        break;
      }
    }
    if (ok) {
      pts.push_back(p);
    }
  }
  Dataset& d = out.dataset;
  d.grid = tg;
  for (std::size_t s = 0; s < S; ++s) {
    StationMeta m;
    char id[32];
    std::snprintf(id, sizeof id, "ST%03zu", s + 1);
    m.id = id;
    std::tie(m.lat, m.lon) = unproject(pts[s].x, pts[s].y);
    m.easting = pts[s].x;
    m.northing = pts[s].y;
    double z = rs.uniform() < cfg.coastal_fraction
                   ? cfg.altitude_min_m - cfg.coastal_mean_m * std::log(1.0 - rs.uniform())
                   : rs.normal(cfg.mountain_mean_m, cfg.mountain_sd_m);
    m.altitude = round_to(std::clamp(z, cfg.altitude_min_m, cfg.altitude_max_m), 1);
    d.stations.push_back(std::move(m));
  }

  // spatial covariance of the innovations, factorized once
  Eigen::MatrixXd C(S, S);
  for (std::size_t a = 0; a < S; ++a) {
    for (std::size_t b = 0; b < S; ++b) {
      C(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          a == b ? cfg.variogram.sill * (1.0 + 1e-10)
                 : cfg.variogram.sill - cfg.variogram(distance(pts[a], pts[b]));
    }
  }
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(C.rows(), C.cols());
  if (cfg.variogram.sill > 0.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) {
      throw NumericError("synth: station covariance is not positive definite");
    }
    L = llt.matrixL();
  }

  Rng rp(Rng::derive(cfg.seed, kPhi));
  out.truth.phi.resize(S);
  for (auto& phi : out.truth.phi) {
    const double its = rp.uniform(cfg.its_min_hours, cfg.its_max_hours);
    phi = its > 0.0 ? std::exp(-(cfg.step_minutes / 60.0) / its) : 0.0;
  }

  // innovations and noise per time block from independent substreams
  std::vector<double> innov(uz(T) * S);
  out.truth.noise_k.assign(uz(T) * S, 0.0);
  const std::int64_t blocks = (T + kBlock - 1) / kBlock;
  parallel_for(0, static_cast<std::size_t>(blocks), [&](std::size_t b) {
    const std::int64_t t0 = static_cast<std::int64_t>(b) * kBlock;
    const std::int64_t len = std::min(kBlock, T - t0);
    Rng ri(Rng::derive(cfg.seed, kInnovation + b));
    Eigen::MatrixXd Z(S, len);
    for (Eigen::Index c = 0; c < len; ++c) {
      for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(S); ++r) {
        Z(r, c) = ri.normal();
      }
    }
    const Eigen::MatrixXd E = L * Z;
    Rng rn(Rng::derive(cfg.seed, kNoise + b));
    for (std::int64_t c = 0; c < len; ++c) {
      for (std::size_t s = 0; s < S; ++s) {
        innov[uz(t0 + c) * S + s] = E(static_cast<Eigen::Index>(s), c);
        out.truth.noise_k[uz(t0 + c) * S + s] = cfg.noise_sd_k * rn.normal();
      }
    }
  });

  out.truth.fluct_k.resize(uz(T) * S);
  for (std::size_t s = 0; s < S; ++s) {
    const double phi = out.truth.phi[s];
    const double k = std::sqrt(1.0 - phi * phi);
    double x = innov[s];
    out.truth.fluct_k[s] = x;
    for (std::int64_t t = 1; t < T; ++t) {
      x = phi * x + k * innov[uz(t) * S + s];
      out.truth.fluct_k[uz(t) * S + s] = x;
    }
  }

  out.truth.periodic_k.resize(uz(T));
  for (std::int64_t t = 0; t < T; ++t) {
    const double minutes =
        static_cast<double>(tg.time_at(t).time_since_epoch().count());
    const double days = minutes / 1440.0;
    const double local_hour = std::fmod(minutes / 60.0 + 9.0, 24.0);
    out.truth.periodic_k[uz(t)] =
        celsius_to_kelvin(cfg.base_temp_c) +
        cfg.amp_yearly_k * std::sin(2.0 * M_PI * (days - 105.0) / 365.2425) +
        cfg.amp_daily_k * std::sin(2.0 * M_PI * (local_hour - 9.0) / 24.0);
  }
  out.truth.offset_k.resize(S);
  for (std::size_t s = 0; s < S; ++s) {
    out.truth.offset_k[s] = -cfg.lapse_k_per_m * d.stations[s].altitude;
  }

  d.series.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> v(uz(T));
    for (std::int64_t t = 0; t < T; ++t) {
      const std::size_t k = uz(t) * S + s;
      const double temp = out.truth.periodic_k[uz(t)] + out.truth.offset_k[s] +
                          out.truth.fluct_k[k] + out.truth.noise_k[k];
      v[uz(t)] = celsius_to_kelvin(round_to(kelvin_to_celsius(temp), 2));
    }
    d.series.push_back(ObservationSeries::make(d.stations[s].id, std::move(v)));
  }

  // pressure for a subset, humidity optionally for all
  Rng rpr(Rng::derive(cfg.seed, kPressure));
  std::vector<bool> has_p(S);
  for (std::size_t s = 0; s < S; ++s) {
    has_p[s] = rpr.uniform() < cfg.pressure_fraction;
  }
  out.pressure_hpa.assign(uz(T) * S, kNaN);
  out.rh_pct.assign(uz(T) * S, kNaN);
  d.pressure_hpa.assign(S, kNaN);
  d.rh_pct_mean.assign(S, kNaN);
  Rng rh(Rng::derive(cfg.seed, kHumidity));
  std::vector<double> rh_base(S);
  for (auto& b : rh_base) {
    b = rh.uniform(55.0, 85.0);
  }
  for (std::size_t s = 0; s < S; ++s) {
    double psum = 0.0, hsum = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
      const std::size_t k = uz(t) * S + s;
      if (has_p[s]) {
        out.pressure_hpa[k] =
            round_to(cfg.pressure_model.pressure_hpa(d.stations[s].altitude) +
                         cfg.pressure_noise_hpa * rpr.normal(),
                     2);
        psum += out.pressure_hpa[k];
      }
      if (cfg.humidity) {
        out.rh_pct[k] = round_to(std::clamp(rh_base[s] + 8.0 * rh.normal(), 5.0, 100.0), 1);
        hsum += out.rh_pct[k];
      }
    }
    if (has_p[s]) {
      d.pressure_hpa[s] = psum / static_cast<double>(T);
    }
    if (cfg.humidity) {
      d.rh_pct_mean[s] = hsum / static_cast<double>(T);
    }
  }

  // external forecasts at valid time t issued at t - lead
  Rng rw(Rng::derive(cfg.seed, kNwp));
  const std::int64_t lead = cfg.nwp_lead_hours * 60 / cfg.step_minutes;
  out.nwp_c.assign(uz(T) * S, kNaN);
  for (std::int64_t t = lead; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      out.nwp_c[uz(t) * S + s] = round_to(
          kelvin_to_celsius(d.series[s].values[uz(t)]) + cfg.nwp_noise_k * rw.normal(), 2);
    }
  }
  return out;
}

nlohmann::json CorruptionLog::to_json() const {
  auto list = [](const std::vector<Entry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) {
      a.push_back({e.station, e.t});
    }
    return a;
  };
  return {{"spikes", list(spikes)}, {"deviations", list(deviations)}, {"nulls", list(nulls)}};
}

CorruptionLog corrupt(Dataset& d, double fraction, std::uint64_t seed, const QcConfig& qc) {
  if (!(fraction >= 0.0 && fraction <= 0.05)) {
    throw ConfigError("corrupt: fraction must lie in [0, 0.05]");
  }
  CorruptionLog log;
  const std::size_t S = d.series.size();
  if (S == 0) {
    return log;
  }
  const std::size_t T = d.series[0].size();
  const std::size_t total = S * T;
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  std::vector<bool> taken(total, false);
  Rng rng(seed);
  const double mid_c = 0.5 * (qc.min_temp_c + qc.max_temp_c);
  std::size_t done = 0, tries = 0;
  while (done < want) {
    if (++tries > 100 * total + 1000) {
      throw ConfigError("corrupt: not enough non-null samples");
    }
    const std::size_t k = static_cast<std::size_t>(rng.below(total));
    const std::size_t s = k / T, t = k % T;
    double& v = d.series[s].values[t];
    if (taken[k] || !std::isfinite(v)) {
      continue;
    }
    taken[k] = true;
    const CorruptionLog::Entry e{s, static_cast<std::int64_t>(t)};
    switch (done % 3) {
    case 0:
      v = celsius_to_kelvin(50.0);
      log.spikes.push_back(e);
      break;
    case 1:
      v += kelvin_to_celsius(v) > mid_c ? -30.0 : 30.0;
      log.deviations.push_back(e);
      break;
    default:
      v = kNaN;
      log.nulls.push_back(e);
      break;
    }
    ++done;
  }
  auto by_pos = [](const CorruptionLog::Entry& a, const CorruptionLog::Entry& b) {
    return std::tie(a.station, a.t) < std::tie(b.station, b.t);
  };
  std::sort(log.spikes.begin(), log.spikes.end(), by_pos);
  std::sort(log.deviations.begin(), log.deviations.end(), by_pos);
  std::sort(log.nulls.begin(), log.nulls.end(), by_pos);
  return log;
}

void write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg,
                  const SynthCorpus& corpus, const Dataset& d) {
  std::filesystem::create_directories(dir);
  const std::size_t S = d.stations.size();
  const std::int64_t T = d.grid.count();

  io::write_atomic(dir / "stations.csv", [&](std::ostream& out) {
    out << "id,lat,lon,easting,northing,altitude_m\n";
    for (const auto& m : d.stations) {
      out << m.id << ',' << io::format_double(m.lat) << ',' << io::format_double(m.lon)
          << ',' << io::format_double(m.easting) << ',' << io::format_double(m.northing)
          << ',' << io::format_double(m.altitude) << '\n';
    }
  });

  auto opt = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string(); };
  io::write_atomic(dir / "observations.csv", [&](std::ostream& out) {
    out << "timestamp_utc,station_id,temp_c,pressure_hpa,rh_pct\n";
    std::string buf;
    for (std::int64_t t = 0; t < T; ++t) {
      const std::string ts = format_timestamp(d.grid.time_at(t));
      buf.clear();
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t k = uz(t) * S + s;
        const double v = d.series[s].values[uz(t)];
        buf += ts;
        buf += ',';
        buf += d.stations[s].id;
        buf += ',';
        if (std::isfinite(v)) {
          buf += io::format_double(round_to(kelvin_to_celsius(v), 2));
        }
        buf += ',';
        buf += opt(corpus.pressure_hpa[k]);
        buf += ',';
        buf += opt(corpus.rh_pct[k]);
        buf += '\n';
      }
      out << buf;
    }
  });

  io::write_atomic(dir / "external_nwp.csv", [&](std::ostream& out) {
    out << "timestamp_utc,station_id,lead_h,temp_c\n";
    const std::string lead = std::to_string(cfg.nwp_lead_hours);
    std::string buf;
    for (std::int64_t t = 0; t < T; ++t) {
      const std::string ts = format_timestamp(d.grid.time_at(t));
      buf.clear();
      for (std::size_t s = 0; s < S; ++s) {
        const double v = corpus.nwp_c[uz(t) * S + s];
        if (!std::isfinite(v)) {
          continue;
        }
        buf += ts + ',' + d.stations[s].id + ',' + lead + ',' + io::format_double(v) + '\n';
      }
      out << buf;
    }
  });

  write_land_grid(dir / "land.pgm", cfg.grid, corpus.truth.land);
  io::write_json(dir / "grid.json", cfg.grid.to_json());
  nlohmann::json meta = cfg.to_json();
  meta["time"] = {{"start", format_timestamp(d.grid.start())},
                  {"step_minutes", d.grid.step_minutes()},
                  {"count", d.grid.count()}};
  io::write_json(dir / "synth.json", meta);
}

} // namespace tptkit
