#include "tptkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "tptkit/climatology.hpp"
#include "tptkit/error.hpp"
#include "tptkit/height_adjust.hpp"
#include "tptkit/io.hpp"
#include "tptkit/parallel.hpp"
#include "tptkit/rng.hpp"

namespace tptkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t uz(std::int64_t v) { return static_cast<std::size_t>(v); }

json nan_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return a;
}

std::vector<double> nan_vector(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(x.is_null() ? kNaN : x.get<double>());
  return v;
}

json qc_to_json(const QcConfig& q) {
  return {{"min_temp_c", q.min_temp_c},
          {"max_temp_c", q.max_temp_c},
          {"max_deviation_k", q.max_deviation_k},
          {"end_fill_window", q.end_fill_window},
          {"window_days", q.window_days}};
}

QcConfig qc_from_json(const json& j) {
  QcConfig q;
  q.min_temp_c = j.value("min_temp_c", q.min_temp_c);
  q.max_temp_c = j.value("max_temp_c", q.max_temp_c);
  q.max_deviation_k = j.value("max_deviation_k", q.max_deviation_k);
  q.end_fill_window = j.value("end_fill_window", q.end_fill_window);
  q.window_days = j.value("window_days", q.window_days);
  q.validate();
  return q;
}

json std_to_json(const StandardizeParams& p) { return {{"mean", p.mean}, {"std", p.std}}; }
StandardizeParams std_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::string split_string(std::span<const SplitLabel> s) {
  std::string out(s.size(), '0');
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<char>('0' + static_cast<int>(s[i]));
  return out;
}

std::vector<SplitLabel> split_from_string(const std::string& s) {
  std::vector<SplitLabel> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '2') throw InputError("corrupt split labels");
    out[i] = static_cast<SplitLabel>(s[i] - '0');
  }
  return out;
}

std::vector<Point2> points_of(const std::vector<StationMeta>& st) {
  std::vector<Point2> p;
  p.reserve(st.size());
  for (const auto& m : st) p.push_back({m.easting, m.northing});
  return p;
}

std::vector<StationMeta> read_stations(const fs::path& path, std::string_view producer) {
  io::require_artifact(path, producer);
  std::ifstream in(path);
  return read_station_meta(in, GeoBox{});
}

std::string lead_tag(const std::string& model, int lead, SplitLabel split) {
  return model + "_lead" + std::to_string(lead) + "_" + to_string(split);
}

void say(bool verbose, const std::string& msg) {
  if (verbose) std::cerr << msg << '\n';
}

// Everything downstream of transform needs the same handful of arrays.
struct Prepared {
  Dataset meta; // grid and stations only
  io::StationMatrix theta;
  std::vector<SplitLabel> split;
  HeightAdjustModel height;
  StandardizeParams station_std;
  std::vector<double> factor; // f(z) per station
};

Prepared load_prepared(const fs::path& art) {
  Prepared p;
  p.theta = io::read_station_matrix(art / "transform" / "theta", "transform");
  p.meta.grid = p.theta.grid;
  p.meta.stations = read_stations(art / "transform" / "stations.csv", "transform");
  auto sj = io::read_json(art / "transform" / "split.json");
  p.split = split_from_string(sj.at("labels").get<std::string>());
  p.height = HeightAdjustModel::from_json(io::read_json(art / "transform" / "height_model.json"));
  p.station_std = std_from_json(io::read_json(art / "transform" / "standardize.json"));
  for (const auto& m : p.meta.stations) p.factor.push_back(p.height.factor(m.altitude));
  return p;
}

std::vector<ClimatologyTable> load_climatology(const fs::path& art,
                                               const std::vector<StationMeta>& stations) {
  io::require_artifact(art / "climatology" / "index.json", "climatology");
  std::vector<ClimatologyTable> t(stations.size());
  parallel_for(0, stations.size(), [&](std::size_t s) {
    t[s] = read_climatology_csv(art / "climatology" / (stations[s].id + ".csv"), stations[s].id);
  });
  return t;
}

struct MeshData {
  MeshSequence seq;
  MaskSet masks;
  StandardizeParams std;
};

MeshData load_mesh(const fs::path& art) {
  MeshData m;
  m.seq = read_mesh_sequence(art / "krige" / "theta_mesh");
  auto g = GridSpec::from_json(io::read_json(art / "krige" / "grid.json"));
  auto land = read_land_grid(art / "krige" / "land.pgm", g);
  auto meta = io::read_json(art / "krige" / "meta.json");
  m.masks = build_masks(g, land, meta.at("buffer_km").get<double>());
  m.std = std_from_json(meta.at("standardize"));
  return m;
}

std::vector<double> standardized_mesh(const MeshData& m) {
  std::vector<double> f(m.seq.values.size(), 0.0);
  const std::size_t px = m.seq.grid.size();
  for (std::size_t t = 0; t < m.seq.timestamps.size(); ++t)
    for (std::size_t k = 0; k < px; ++k)
      if (m.masks.enlarged[k]) f[t * px + k] = m.std.apply(m.seq.values[t * px + k]);
  return f;
}

std::vector<double> standardized_theta(const Prepared& p) {
  return standardize(p.theta.values, p.station_std);
}

GnnModel load_gnn(const fs::path& stem) {
  json extra;
  io::require_artifact(fs::path(stem.string() + ".json"), "train --model gnn");
  auto params = ad::ParamSet::load(stem.string(), &extra);
  return GnnModel(GnnConfig::from_json(extra.at("config")), extra.at("n_features").get<int>(),
                  std::move(params));
}

CnnModel load_cnn(const fs::path& stem, const Mask& enlarged) {
  json extra;
  io::require_artifact(fs::path(stem.string() + ".json"), "train --model cnn");
  auto params = ad::ParamSet::load(stem.string(), &extra);
  return CnnModel(CnnConfig::from_json(extra.at("config")), enlarged, std::move(params));
}

StationFeatures features_for(const Prepared& p, const fs::path& art, bool use_rh) {
  std::vector<double> rh;
  if (use_rh) rh = nan_vector(io::read_json(art / "qc" / "meta.json").at("rh_pct_mean"));
  return make_station_features(p.meta.stations, rh, use_rh);
}

// Station predictions in standardized θ′ for a batch of input states.
std::vector<double> gnn_predict_batch(const GnnModel& m, const StationFeatures& f,
                                      const GraphTopology& g, std::span<const double> states,
                                      int batch) {
  auto csr = g.csr.replicate(batch);
  return m.predict(f.build(states, batch), csr);
}

std::vector<double> cnn_predict_batch(CnnModel& m, std::span<const double> frames, int batch) {
  const int n = m.config().grid;
  ad::Tensor in({batch, 1, n, n}, std::vector<double>(frames.begin(), frames.end()));
  return m.predict(in);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

} // namespace

// --- config -------------------------------------------------------------------

PipelineConfig::PipelineConfig() {
  gnn.hidden = 16;
  gnn.heads = 2;
  gnn.layers = 2;
  cnn.latent = 64;
  cnn.predictor_width = 64;
  train_gnn.adam.lr = 1e-3;
  train_gnn.epochs = 20;
  train_gnn.batch_size = 16;
  train_gnn.max_samples_per_epoch = 1024;
  train_cnn = train_gnn;
  train_cnn.epochs = 20;
  train_cnn.max_samples_per_epoch = 512;
  train_sweep = train_cnn;
  train_sweep.epochs = 4;
}

TrainConfig PipelineConfig::train_config(const std::string& model, int lead_hours) const {
  TrainConfig base = model == "gnn" ? train_gnn : model == "cnn" ? train_cnn : train_sweep;
  json j = base.to_json();
  auto key = std::to_string(lead_hours);
  if (train_per_lead.contains(key) && train_per_lead[key].contains(model))
    j.merge_patch(train_per_lead[key][model]);
  j["lead_hours"] = lead_hours;
  return TrainConfig::from_json(j);
}

json PipelineConfig::to_json() const {
  json years = clim_years;
  return {{"paths",
           {{"corpus", corpus.generic_string()},
            {"artifacts", artifacts.generic_string()},
            {"reports", reports.generic_string()}}},
          {"synth", synth.to_json()},
          {"grid", grid ? grid->to_json() : json(nullptr)},
          {"buffer_km", buffer_km},
          {"qc", qc_to_json(qc)},
          {"split",
           {{"train", split.train},
            {"val", split.val},
            {"test", split.test},
            {"seed", split_seed},
            {"holdout_year", holdout_year}}},
          {"climatology", {{"window_days", clim_window_days}, {"years", years}}},
          {"variogram",
           {{"kind", to_string(variogram_kind)},
            {"fit", fit_variogram},
            {"nugget", variogram.nugget},
            {"sill", variogram.sill},
            {"range_m", variogram.range_m},
            {"bin_km", variogram_bin_km},
            {"max_lag_km", variogram_max_lag_km},
            {"snapshots", variogram_snapshots}}},
          {"stats", {{"its_max_lag_hours", its_max_lag_hours}, {"corr_snapshots", corr_snapshots}}},
          {"gnn", gnn.to_json()},
          {"cnn", cnn.to_json()},
          {"train",
           {{"gnn", train_gnn.to_json()},
            {"cnn", train_cnn.to_json()},
            {"sweep", train_sweep.to_json()},
            {"per_lead", train_per_lead}}},
          {"sweep", {{"widths", sweep_widths}}}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  check_keys(j,
             {"paths", "synth", "grid", "buffer_km", "qc", "split", "climatology", "variogram",
              "stats", "gnn", "cnn", "train", "sweep"},
             "config");
  PipelineConfig c;
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"corpus", "artifacts", "reports"}, "paths");
    c.corpus = p.value("corpus", c.corpus.string());
    c.artifacts = p.value("artifacts", c.artifacts.string());
    c.reports = p.value("reports", c.reports.string());
  }
  if (j.contains("synth")) c.synth = SynthConfig::from_json(j["synth"]);
  if (j.contains("grid") && !j["grid"].is_null()) c.grid = GridSpec::from_json(j["grid"]);
  c.buffer_km = j.value("buffer_km", c.buffer_km);
  if (j.contains("qc")) c.qc = qc_from_json(j["qc"]);
  if (j.contains("split")) {
    const auto& s = j["split"];
    check_keys(s, {"train", "val", "test", "seed", "holdout_year"}, "split");
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
    c.split_seed = s.value("seed", c.split_seed);
    c.holdout_year = s.value("holdout_year", c.holdout_year);
  }
  if (j.contains("climatology")) {
    const auto& s = j["climatology"];
    check_keys(s, {"window_days", "years"}, "climatology");
    c.clim_window_days = s.value("window_days", c.clim_window_days);
    c.clim_years = s.value("years", c.clim_years);
  }
  if (j.contains("variogram")) {
    const auto& v = j["variogram"];
    check_keys(v, {"kind", "fit", "nugget", "sill", "range_m", "bin_km", "max_lag_km", "snapshots"},
               "variogram");
    c.variogram_kind = parse_variogram_kind(v.value("kind", std::string("exponential")));
    c.fit_variogram = v.value("fit", c.fit_variogram);
    c.variogram.kind = c.variogram_kind;
    c.variogram.nugget = v.value("nugget", c.variogram.nugget);
    c.variogram.sill = v.value("sill", c.variogram.sill);
    c.variogram.range_m = v.value("range_m", c.variogram.range_m);
    c.variogram.validate();
    c.variogram_bin_km = v.value("bin_km", c.variogram_bin_km);
    c.variogram_max_lag_km = v.value("max_lag_km", c.variogram_max_lag_km);
    c.variogram_snapshots = v.value("snapshots", c.variogram_snapshots);
  }
  if (j.contains("stats")) {
    const auto& s = j["stats"];
    check_keys(s, {"its_max_lag_hours", "corr_snapshots"}, "stats");
    c.its_max_lag_hours = s.value("its_max_lag_hours", c.its_max_lag_hours);
    c.corr_snapshots = s.value("corr_snapshots", c.corr_snapshots);
  }
  if (j.contains("gnn")) {
    json g = c.gnn.to_json();
    g.merge_patch(j["gnn"]);
    c.gnn = GnnConfig::from_json(g);
  }
  if (j.contains("cnn")) {
    json g = c.cnn.to_json();
    g.merge_patch(j["cnn"]);
    c.cnn = CnnConfig::from_json(g);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"gnn", "cnn", "sweep", "per_lead"}, "train");
    auto patch = [&](TrainConfig& dst, const char* key) {
      if (!t.contains(key)) return;
      json b = dst.to_json();
      b.merge_patch(t[key]);
      dst = TrainConfig::from_json(b);
    };
    patch(c.train_gnn, "gnn");
    patch(c.train_cnn, "cnn");
    patch(c.train_sweep, "sweep");
    if (t.contains("per_lead")) c.train_per_lead = t["per_lead"];
  }
  if (j.contains("sweep")) {
    check_keys(j["sweep"], {"widths"}, "sweep");
    c.sweep_widths = j["sweep"].value("widths", c.sweep_widths);
  }
  if (c.buffer_km < 0 || c.clim_window_days < 1 || c.variogram_snapshots < 1 ||
      c.its_max_lag_hours < 1 || c.corr_snapshots < 1)
    throw ConfigError("config: sizes and windows must be positive");
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

std::string PipelineConfig::hash() const {
  json content = to_json();
  content.erase("paths");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(content.dump())));
  return buf;
}

SplitLabel parse_split(const std::string& s) {
  if (s == "train") return SplitLabel::train;
  if (s == "val") return SplitLabel::val;
  if (s == "test") return SplitLabel::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

int lead_steps(const TimeGrid& grid, int lead_hours) {
  if (lead_hours < 1 || (lead_hours * 60) % grid.step_minutes() != 0)
    throw ConfigError("lead of " + std::to_string(lead_hours) +
                      " h is not a positive multiple of the time step");
  return lead_hours * 60 / grid.step_minutes();
}

// --- persisted datasets -----------------------------------------------------------

void write_stations_csv(const fs::path& path, const std::vector<StationMeta>& stations) {
  io::write_atomic(path, [&](std::ostream& o) {
    o << "id,lat,lon,easting,northing,altitude_m\n";
    for (const auto& m : stations)
      o << m.id << ',' << io::format_double(m.lat) << ',' << io::format_double(m.lon) << ','
        << io::format_double(m.easting) << ',' << io::format_double(m.northing) << ','
        << io::format_double(m.altitude) << '\n';
  });
}

void save_stage_dataset(const fs::path& dir, const Dataset& d, const json& meta) {
  write_stations_csv(dir / "stations.csv", d.stations);
  io::StationMatrix m, f;
  m.grid = f.grid = d.grid;
  for (const auto& s : d.stations) m.station_ids.push_back(s.id);
  f.station_ids = m.station_ids;
  m.quantity = "temperature_k";
  f.quantity = "sample_flag";
  const std::size_t S = d.stations.size();
  m.values.resize(uz(d.grid.count()) * S);
  f.values.resize(m.values.size());
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < d.series[s].size(); ++t) {
      m.values[t * S + s] = d.series[s].values[t];
      f.values[t * S + s] = static_cast<double>(d.series[s].flags[t]);
    }
  io::write_station_matrix(dir / "temp_k", m);
  io::write_station_matrix(dir / "flags", f);
  json j = meta;
  j["pressure_hpa"] = nan_array(d.pressure_hpa);
  j["rh_pct_mean"] = nan_array(d.rh_pct_mean);
  io::write_json(dir / "meta.json", j);
}

Dataset load_stage_dataset(const fs::path& dir, std::string_view producer) {
  Dataset d;
  d.stations = read_stations(dir / "stations.csv", producer);
  auto m = io::read_station_matrix(dir / "temp_k", producer);
  auto f = io::read_station_matrix(dir / "flags", producer);
  if (m.station_ids.size() != d.stations.size())
    throw InputError(dir.string() + ": station list and matrix disagree");
  d.grid = m.grid;
  for (std::size_t s = 0; s < d.stations.size(); ++s) {
    auto series = ObservationSeries::make(d.stations[s].id, m.column(s));
    auto fl = f.column(s);
    for (std::size_t t = 0; t < fl.size(); ++t) series.flags[t] = static_cast<SampleFlag>(fl[t]);
    d.series.push_back(std::move(series));
  }
  auto meta = io::read_json(dir / "meta.json");
  d.pressure_hpa = nan_vector(meta.at("pressure_hpa"));
  d.rh_pct_mean = nan_vector(meta.at("rh_pct_mean"));
  return d;
}

TimeGrid infer_time_grid(const fs::path& corpus) {
  if (fs::exists(corpus / "synth.json")) {
    auto t = io::read_json(corpus / "synth.json").at("time");
    return TimeGrid(parse_timestamp(t.at("start").get<std::string>()),
                    t.at("step_minutes").get<int>(), t.at("count").get<std::int64_t>());
  }
  io::require_artifact(corpus / "observations.csv", "synth");
  std::ifstream in(corpus / "observations.csv");
  std::string line;
  std::getline(in, line);
  auto header = io::split_csv(line);
  auto col = std::find(header.begin(), header.end(), "timestamp_utc");
  if (col == header.end()) throw IngestError("observations.csv has no timestamp_utc column");
  const auto c = static_cast<std::size_t>(col - header.begin());
  std::set<std::int64_t> minutes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = io::split_csv(line);
    if (f.size() <= c) continue;
    minutes.insert(parse_timestamp(f[c]).time_since_epoch().count());
  }
  if (minutes.empty()) throw IngestError("observations.csv has no rows");
  std::int64_t step = 0;
  for (auto it = std::next(minutes.begin()); it != minutes.end(); ++it)
    step = std::gcd(step, *it - *std::prev(it));
  if (step == 0) step = 60;
  if (1440 % step != 0) throw IngestError("observation spacing does not divide a day");
  const auto first = *minutes.begin();
  return TimeGrid(TimePoint{Minutes{first}}, static_cast<int>(step),
                  (*minutes.rbegin() - first) / step + 1);
}

// --- pipeline ------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {}

fs::path Pipeline::stage_dir(const std::string& stage) const { return cfg_.artifacts / stage; }

void Pipeline::record(const std::string& stage, std::uint64_t seed,
                      const std::vector<fs::path>& outputs, const json& extra) {
  fs::path path = cfg_.artifacts / "manifest.json";
  json m = fs::exists(path) ? io::read_json(path) : json::object();
  m["tool"] = "tptkit";
  m["version"] = kVersion;
  json outs = json::array();
  for (const auto& p : outputs) {
    auto rel = p.lexically_relative(cfg_.artifacts);
    outs.push_back((rel.empty() ? p : rel).generic_string());
  }
  json entry = {{"config_hash", cfg_.hash()},
                {"seed", seed},
                {"version", kVersion},
                {"outputs", outs}};
  for (auto it = extra.begin(); it != extra.end(); ++it) entry[it.key()] = it.value();
  m["stages"][stage] = entry;
  io::write_json(path, m);
}

json Pipeline::synth(const std::optional<fs::path>& out) {
  if (out) cfg_.corpus = *out;
  auto corpus = generate(cfg_.synth);
  Dataset d = corpus.dataset;
  auto log = corrupt(d, cfg_.synth.corrupt_fraction, Rng::derive(cfg_.synth.seed, 99), cfg_.qc);
  write_corpus(cfg_.corpus, cfg_.synth, corpus, d);
  io::write_json(cfg_.corpus / "corruption.json", log.to_json());
  json summary = {{"stations", d.stations.size()},
                  {"samples", d.grid.count()},
                  {"corrupted", log.total()},
                  {"corpus", cfg_.corpus.generic_string()}};
  record("synth", cfg_.synth.seed, {cfg_.corpus / "observations.csv", cfg_.corpus / "stations.csv"},
         {{"corrupted", log.total()}});
  return summary;
}

json Pipeline::ingest() {
  io::require_artifact(cfg_.corpus / "stations.csv", "synth");
  io::require_artifact(cfg_.corpus / "observations.csv", "synth");
  auto grid = infer_time_grid(cfg_.corpus);
  auto r = tptkit::ingest(cfg_.corpus / "stations.csv", cfg_.corpus / "observations.csv", grid,
                          cfg_.synth.box);
  save_stage_dataset(stage_dir("ingest"), r.dataset,
                     {{"duplicates", r.duplicates},
                      {"rows", r.rows},
                      {"rows_outside_grid", r.rows_outside_grid}});
  record("ingest", 0, {stage_dir("ingest") / "temp_k.bin"});
  return {{"stations", r.dataset.stations.size()},
          {"samples", grid.count()},
          {"rows", r.rows},
          {"rows_outside_grid", r.rows_outside_grid}};
}

json Pipeline::qc() {
  if (!fs::exists(stage_dir("ingest") / "meta.json")) ingest();
  Dataset d = load_stage_dataset(stage_dir("ingest"), "ingest");
  auto meta = io::read_json(stage_dir("ingest") / "meta.json");
  auto dups = meta.at("duplicates").get<std::vector<std::int64_t>>();
  auto r = run_qc(std::move(d), cfg_.qc, cfg_.clim_years, dups);
  save_stage_dataset(stage_dir("qc"), r.dataset, json::object());
  io::write_json(stage_dir("qc") / "report.json", r.report.to_json());
  record("qc", 0, {stage_dir("qc") / "temp_k.bin", stage_dir("qc") / "report.json"});
  return {{"replaced_fraction", r.report.replaced_fraction},
          {"total_replaced", r.report.total_replaced},
          {"total_samples", r.report.total_samples}};
}

json Pipeline::climatology() {
  Dataset d = load_stage_dataset(stage_dir("qc"), "qc");
  std::vector<ClimatologyTable> tables(d.series.size());
  parallel_for(0, d.series.size(), [&](std::size_t s) {
    tables[s] = compute_climatology(d.series[s], d.grid, cfg_.clim_window_days, cfg_.clim_years);
    write_climatology_csv(stage_dir("climatology") / (d.stations[s].id + ".csv"), tables[s]);
  });
  json ids = json::array();
  for (const auto& m : d.stations) ids.push_back(m.id);
  io::write_json(stage_dir("climatology") / "index.json",
                 {{"stations", ids},
                  {"window_days", cfg_.clim_window_days},
                  {"years", tables.empty() ? json::array() : json(tables[0].years_used)}});
  record("climatology", 0, {stage_dir("climatology") / "index.json"});
  return {{"stations", tables.size()},
          {"years", tables.empty() ? json::array() : json(tables[0].years_used)}};
}

json Pipeline::transform() {
  Dataset d = load_stage_dataset(stage_dir("qc"), "qc");
  auto tables = load_climatology(cfg_.artifacts, d.stations);
  const std::size_t S = d.stations.size();
  const auto T = uz(d.grid.count());

  HeightAdjustModel hm;
  std::string height_source = "default";
  {
    std::vector<double> z, p;
    for (std::size_t s = 0; s < S; ++s)
      if (std::isfinite(d.pressure_hpa[s])) {
        z.push_back(d.stations[s].altitude);
        p.push_back(d.pressure_hpa[s]);
      }
    try {
      hm = fit_pressure_model(z, p);
      height_source = "fitted";
    } catch (const Error&) {
    }
  }

  io::StationMatrix tp, th;
  tp.grid = th.grid = d.grid;
  for (const auto& m : d.stations) tp.station_ids.push_back(m.id);
  th.station_ids = tp.station_ids;
  tp.quantity = "tprime_k";
  th.quantity = "theta_prime_k";
  tp.values.resize(T * S);
  th.values.resize(T * S);
  parallel_for(0, S, [&](std::size_t s) {
    auto x = decompose(d.series[s].values, d.grid, tables[s]);
    const double f = hm.factor(d.stations[s].altitude);
    for (std::size_t t = 0; t < T; ++t) {
      tp.values[t * S + s] = x[t];
      th.values[t * S + s] = x[t] * f;
    }
  });

  auto split = cfg_.holdout_year
                   ? split_holdout_year(d.grid, cfg_.holdout_year, cfg_.split, cfg_.split_seed)
                   : split_indices(d.grid.count(), cfg_.split, cfg_.split_seed);
  std::vector<double> train_vals;
  for (std::size_t t = 0; t < T; ++t)
    if (split[t] == SplitLabel::train)
      train_vals.insert(train_vals.end(), th.values.begin() + static_cast<std::ptrdiff_t>(t * S),
                        th.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * S));
  auto sp = fit_standardize(train_vals);

  auto dir = stage_dir("transform");
  io::write_station_matrix(dir / "tprime", tp);
  io::write_station_matrix(dir / "theta", th);
  write_stations_csv(dir / "stations.csv", d.stations);
  json hj = hm.to_json();
  hj["source"] = height_source;
  io::write_json(dir / "height_model.json", hj);
  io::write_json(dir / "split.json", {{"seed", cfg_.split_seed},
                                      {"holdout_year", cfg_.holdout_year},
                                      {"labels", split_string(split)}});
  io::write_json(dir / "standardize.json", std_to_json(sp));
  record("transform", cfg_.split_seed, {dir / "theta.bin", dir / "tprime.bin", dir / "split.json"});
  return {{"height_model", height_source},
          {"scale_height_m", hm.scale_height_m},
          {"theta_mean", sp.mean},
          {"theta_std", sp.std}};
}

json Pipeline::krige() {
  auto p = load_prepared(cfg_.artifacts);
  GridSpec grid;
  if (cfg_.grid) {
    grid = *cfg_.grid;
  } else {
    io::require_artifact(cfg_.corpus / "grid.json", "synth");
    grid = GridSpec::from_json(io::read_json(cfg_.corpus / "grid.json"));
  }
  fs::path land_path = cfg_.corpus / "land.pgm";
  if (!fs::exists(land_path) && fs::exists(cfg_.corpus / "land.csv")) land_path = cfg_.corpus / "land.csv";
  auto land = read_land_grid(land_path, grid);
  auto masks = build_masks(grid, land, cfg_.buffer_km);
  const std::size_t S = p.meta.stations.size();
  const auto T = uz(p.meta.grid.count());
  auto pts = points_of(p.meta.stations);

  std::vector<std::int64_t> train_t;
  for (std::size_t t = 0; t < T; ++t)
    if (p.split[t] == SplitLabel::train) train_t.push_back(static_cast<std::int64_t>(t));
  if (train_t.empty()) throw ConfigError("krige: the split has no training samples");
  const std::size_t nsnap = std::min(train_t.size(), uz(cfg_.variogram_snapshots));
  std::vector<double> snaps(nsnap * S);
  for (std::size_t i = 0; i < nsnap; ++i) {
    auto t = uz(train_t[i * train_t.size() / nsnap]);
    std::copy_n(p.theta.values.begin() + static_cast<std::ptrdiff_t>(t * S), S,
                snaps.begin() + static_cast<std::ptrdiff_t>(i * S));
  }

  VariogramModel vg = cfg_.variogram;
  std::string vg_source = "config";
  std::vector<VariogramBin> bins;
  if (cfg_.fit_variogram) {
    VariogramAccumulator acc(cfg_.variogram_bin_km * 1000.0, cfg_.variogram_max_lag_km * 1000.0);
    for (std::size_t i = 0; i < nsnap; ++i) acc.add(pts, {snaps.data() + i * S, S});
    bins = acc.bins();
    try {
      vg = fit_variogram(bins, cfg_.variogram_kind);
      vg_source = "fitted";
    } catch (const FitError& e) {
      vg = e.best();
      vg_source = "fit_not_converged";
    }
  }

  std::vector<std::string> ids;
  for (const auto& m : p.meta.stations) ids.push_back(m.id);
  OrdinaryKriging ok(pts, vg, ids);
  MeshKriger kriger(ok, masks);
  MeshSequence seq;
  seq.grid = grid;
  seq.values.assign(T * grid.size(), 0.0);
  for (std::size_t t = 0; t < T; ++t) seq.timestamps.push_back(p.meta.grid.time_at(static_cast<std::int64_t>(t)));
  parallel_for(0, T, [&](std::size_t t) {
    kriger.krige_into({p.theta.values.data() + t * S, S}, seq.frame(t));
  });
  auto rt = roundtrip_report(kriger, pts, snaps, nsnap);

  std::vector<double> train_mesh;
  for (auto t : train_t)
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (masks.enlarged[k]) train_mesh.push_back(seq.values[uz(t) * grid.size() + k]);
  auto sp = fit_standardize(train_mesh);

  auto dir = stage_dir("krige");
  write_mesh_sequence(dir / "theta_mesh", seq);
  io::write_json(dir / "grid.json", grid.to_json());
  write_land_grid(dir / "land.pgm", grid, masks.land);
  write_land_grid(dir / "enlarged.pgm", grid, masks.enlarged);
  json vj = vg.to_json();
  vj["source"] = vg_source;
  json bj = json::array();
  for (const auto& b : bins) bj.push_back({{"lag_m", b.lag}, {"semivariance", b.semivariance}, {"pairs", b.pairs}});
  vj["empirical"] = bj;
  io::write_json(dir / "variogram.json", vj);
  io::write_json(dir / "meta.json", {{"buffer_km", cfg_.buffer_km},
                                     {"n_inland", masks.n_inland},
                                     {"n_enlarged", masks.n_enlarged},
                                     {"standardize", std_to_json(sp)}});
  io::write_json(dir / "roundtrip.json", {{"mean_rmse_k", rt.mean_rmse},
                                          {"snapshots", rt.snapshots},
                                          {"rmse_per_station", rt.rmse_per_station}});
  record("krige", 0, {dir / "theta_mesh.bin", dir / "variogram.json", dir / "roundtrip.json"});
  return {{"variogram", vg.to_json()},
          {"variogram_source", vg_source},
          {"roundtrip_rmse_k", rt.mean_rmse},
          {"n_inland", masks.n_inland},
          {"n_enlarged", masks.n_enlarged}};
}

json Pipeline::stats() {
  auto tp = io::read_station_matrix(stage_dir("transform") / "tprime", "transform");
  const std::size_t S = tp.station_ids.size();
  const double step_h = tp.grid.step_minutes() / 60.0;
  const auto max_lag = std::min<std::size_t>(uz(cfg_.its_max_lag_hours * 60 / tp.grid.step_minutes()),
                                             uz(tp.grid.count()) - 1);
  std::vector<double> its(S, kNaN);
  parallel_for(0, S, [&](std::size_t s) {
    try {
      its[s] = integral_time_scale(autocorrelation(tp.column(s), max_lag), step_h);
    } catch (const DegenerateError&) {
    }
  });
  auto dir = stage_dir("stats");
  io::write_atomic(dir / "its.csv", [&](std::ostream& o) {
    o << "station_id,its_hours\n";
    for (std::size_t s = 0; s < S; ++s)
      o << tp.station_ids[s] << ',' << (std::isfinite(its[s]) ? io::format_double(its[s]) : "") << '\n';
  });

  auto mesh = load_mesh(cfg_.artifacts);
  const std::size_t T = mesh.seq.timestamps.size();
  const std::size_t n = std::min(T, uz(cfg_.corr_snapshots));
  const std::size_t px = mesh.seq.grid.size();
  std::vector<double> frames(n * px);
  for (std::size_t i = 0; i < n; ++i) {
    auto f = mesh.seq.frame(i * T / n);
    std::copy(f.begin(), f.end(), frames.begin() + static_cast<std::ptrdiff_t>(i * px));
  }
  json corr = json::array();
  io::write_atomic(dir / "spatial_corr.csv", [&](std::ostream& o) {
    o << "direction,region,r_m,corr,pairs\n";
    for (auto d : {Direction::longitudinal, Direction::latitudinal}) {
      for (int reg = 0; reg < 2; ++reg) {
        auto r = spatial_correlation(mesh.seq.grid, frames, n, d,
                                     reg ? mesh.masks.inland : mesh.masks.enlarged,
                                     reg ? "inland" : "entire");
        for (std::size_t i = 0; i < r.r_m.size(); ++i)
          o << to_string(d) << ',' << r.region << ',' << io::format_double(r.r_m[i]) << ','
            << io::format_double(r.corr[i]) << ',' << r.pairs[i] << '\n';
        corr.push_back({{"direction", to_string(d)}, {"region", r.region},
                        {"snapshots_used", r.snapshots_used}});
      }
    }
  });
  double mean_its = 0.0;
  std::size_t n_its = 0;
  for (double v : its)
    if (std::isfinite(v)) mean_its += v, ++n_its;
  mean_its = n_its ? mean_its / static_cast<double>(n_its) : kNaN;
  io::write_json(dir / "summary.json", {{"mean_its_hours", mean_its}, {"stations", n_its},
                                        {"spatial_corr", corr}});
  record("stats", 0, {dir / "its.csv", dir / "spatial_corr.csv"});
  return {{"mean_its_hours", mean_its}, {"stations", n_its}};
}

json Pipeline::train(const std::string& model, int lead_hours) {
  auto p = load_prepared(cfg_.artifacts);
  auto tc = cfg_.train_config(model, lead_hours);
  const int ls = lead_steps(p.meta.grid, lead_hours);
  const auto T = uz(p.meta.grid.count());
  const std::string stem = model + "_lead" + std::to_string(lead_hours);
  auto dir = stage_dir("models");
  auto log = [&](int e, double tr, double va) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s epoch %d train %.6f val %.6f", stem.c_str(), e, tr, va);
    say(verbose_, buf);
  };
  LossHistory hist;
  std::size_t n_params = 0;
  if (model == "gnn") {
    auto theta = standardized_theta(p);
    auto feats = features_for(p, cfg_.artifacts, cfg_.gnn.use_rh);
    auto graph = build_graph(points_of(p.meta.stations), cfg_.gnn.radius_km);
    GnnModel m(cfg_.gnn, feats.width());
    StationProblem prob(m, feats, graph, theta, T, ls, p.split);
    hist = tptkit::train(prob, tc, log);
    n_params = m.params().scalar_count();
    m.params().save((dir / stem).string(), {{"model", "gnn"},
                                            {"lead_hours", lead_hours},
                                            {"config", cfg_.gnn.to_json()},
                                            {"n_features", feats.width()},
                                            {"train", tc.to_json()}});
  } else if (model == "cnn") {
    auto mesh = load_mesh(cfg_.artifacts);
    auto cc = cfg_.cnn;
    if (mesh.seq.grid.nx != cc.grid || mesh.seq.grid.ny != cc.grid)
      throw ConfigError("cnn.grid is " + std::to_string(cc.grid) + " but the mesh is " +
                        std::to_string(mesh.seq.grid.nx) + "x" + std::to_string(mesh.seq.grid.ny));
    auto fields = standardized_mesh(mesh);
    CnnModel m(cc, mesh.masks.enlarged);
    MeshProblem prob(m, mesh.masks.inland, fields, T, ls, p.split);
    hist = tptkit::train(prob, tc, log);
    n_params = m.params().scalar_count();
    m.params().save((dir / stem).string(), {{"model", "cnn"},
                                            {"lead_hours", lead_hours},
                                            {"config", cc.to_json()},
                                            {"train", tc.to_json()}});
  } else {
    throw ConfigError("unknown model '" + model + "' (expected gnn or cnn)");
  }
  io::write_json(dir / (stem + "_history.json"), hist.to_json());
  record("train:" + stem, tc.seed, {dir / (stem + ".bin"), dir / (stem + "_history.json")},
         {{"parameters", n_params}});
  return {{"model", model},
          {"lead_hours", lead_hours},
          {"parameters", n_params},
          {"epochs", hist.train.size()},
          {"final_train_loss", hist.train.empty() ? json(nullptr) : json(hist.train.back())},
          {"final_val_loss", hist.val.empty() ? json(nullptr) : json(hist.val.back())}};
}

namespace {

// θ′ predictions [k][station] at valid times, unstandardized, turned into
// temperatures through f(z) and the climatology.
std::vector<double> to_temperature(const Prepared& p, const std::vector<ClimatologyTable>& clim,
                                   std::span<const double> theta_pred,
                                   std::span<const std::int64_t> valid) {
  const std::size_t S = p.meta.stations.size();
  std::vector<double> out(theta_pred.size());
  for (std::size_t k = 0; k < valid.size(); ++k)
    for (std::size_t s = 0; s < S; ++s)
      out[k * S + s] = clim[s].at(p.meta.grid, valid[k]) +
                       from_potential(theta_pred[k * S + s], p.meta.stations[s].altitude, p.height);
  return out;
}

constexpr int kPredictBatch = 32;

} // namespace

json Pipeline::predict(const std::string& model, int lead_hours, SplitLabel split) {
  auto p = load_prepared(cfg_.artifacts);
  auto clim = load_climatology(cfg_.artifacts, p.meta.stations);
  const int ls = lead_steps(p.meta.grid, lead_hours);
  const auto T = uz(p.meta.grid.count());
  const std::size_t S = p.meta.stations.size();
  const auto inputs = sample_times(p.split, T, ls)[static_cast<std::size_t>(split)];
  if (inputs.empty()) throw InputError("predict: no samples in the " + std::string(to_string(split)) + " split");
  std::vector<std::int64_t> valid;
  for (auto t : inputs) valid.push_back(t + ls);
  const std::size_t K = inputs.size();
  std::vector<double> theta_pred(K * S);
  auto dir = stage_dir("predictions");
  const std::string tag = lead_tag(model, lead_hours, split);
  std::vector<fs::path> outputs{dir / (tag + ".csv")};

  if (model == "persistence") {
    for (std::size_t k = 0; k < K; ++k) {
      auto state = persistence_predict({p.theta.values.data() + uz(inputs[k]) * S, S});
      std::copy(state.begin(), state.end(), theta_pred.begin() + static_cast<std::ptrdiff_t>(k * S));
    }
  } else if (model == "climatology") {
    auto z = climatology_forecast(K * S);
    std::copy(z.begin(), z.end(), theta_pred.begin());
  } else if (model == "gnn") {
    auto m = load_gnn(stage_dir("models") / ("gnn_lead" + std::to_string(lead_hours)));
    auto feats = features_for(p, cfg_.artifacts, m.config().use_rh);
    auto graph = build_graph(points_of(p.meta.stations), m.config().radius_km);
    auto theta = standardized_theta(p);
    for (std::size_t k0 = 0; k0 < K; k0 += kPredictBatch) {
      const std::size_t k1 = std::min(K, k0 + kPredictBatch);
      const int B = static_cast<int>(k1 - k0);
      std::vector<double> states(uz(B) * S);
      for (std::size_t k = k0; k < k1; ++k)
        std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(uz(inputs[k]) * S), S,
                    states.begin() + static_cast<std::ptrdiff_t>((k - k0) * S));
      auto out = gnn_predict_batch(m, feats, graph, states, B);
      for (std::size_t i = 0; i < out.size(); ++i) theta_pred[k0 * S + i] = p.station_std.invert(out[i]);
    }
  } else if (model == "cnn") {
    auto mesh = load_mesh(cfg_.artifacts);
    auto m = load_cnn(stage_dir("models") / ("cnn_lead" + std::to_string(lead_hours)), mesh.masks.enlarged);
    auto fields = standardized_mesh(mesh);
    const std::size_t px = mesh.seq.grid.size();
    MeshSequence out_seq;
    out_seq.grid = mesh.seq.grid;
    out_seq.values.assign(K * px, 0.0);
    auto pts = points_of(p.meta.stations);
    for (std::size_t k0 = 0; k0 < K; k0 += kPredictBatch) {
      const std::size_t k1 = std::min(K, k0 + kPredictBatch);
      const int B = static_cast<int>(k1 - k0);
      std::vector<double> frames(uz(B) * px);
      for (std::size_t k = k0; k < k1; ++k)
        std::copy_n(fields.begin() + static_cast<std::ptrdiff_t>(uz(inputs[k]) * px), px,
                    frames.begin() + static_cast<std::ptrdiff_t>((k - k0) * px));
      auto out = cnn_predict_batch(m, frames, B);
      for (std::size_t k = k0; k < k1; ++k) {
        auto frame = out_seq.frame(k);
        for (std::size_t i = 0; i < px; ++i)
          frame[i] = mesh.masks.enlarged[i] ? mesh.std.invert(out[(k - k0) * px + i]) : 0.0;
        auto at = sample_bilinear(out_seq.grid, frame, pts);
        std::copy(at.begin(), at.end(), theta_pred.begin() + static_cast<std::ptrdiff_t>(k * S));
      }
    }
    for (auto v : valid) out_seq.timestamps.push_back(p.meta.grid.time_at(v));
    write_mesh_sequence(dir / (tag + "_mesh"), out_seq);
    outputs.push_back(dir / (tag + "_mesh.bin"));
  } else {
    throw ConfigError("unknown model '" + model + "' (expected gnn, cnn, persistence or climatology)");
  }

  auto temps = to_temperature(p, clim, theta_pred, valid);
  write_forecast_csv(dir / (tag + ".csv"), p.meta, lead_hours, temps, valid);
  record("predict:" + tag, 0, outputs);
  return {{"model", model},
          {"lead_hours", lead_hours},
          {"split", to_string(split)},
          {"instances", K},
          {"file", (dir / (tag + ".csv")).generic_string()}};
}

json Pipeline::rollout(const std::string& model, int lead_hours, int steps, SplitLabel split) {
  if (steps < 1) throw ConfigError("rollout needs at least one step");
  auto p = load_prepared(cfg_.artifacts);
  auto clim = load_climatology(cfg_.artifacts, p.meta.stations);
  const int ls = lead_steps(p.meta.grid, lead_hours);
  const auto T = uz(p.meta.grid.count());
  const std::size_t S = p.meta.stations.size();
  const auto inputs = sample_times(p.split, T, ls * steps)[static_cast<std::size_t>(split)];
  if (inputs.empty()) throw InputError("rollout: no samples in the split");
  std::vector<std::int64_t> valid;
  for (auto t : inputs) valid.push_back(t + static_cast<std::int64_t>(ls) * steps);
  const std::size_t K = inputs.size();
  std::vector<double> theta_pred(K * S);

  if (model == "gnn") {
    auto m = load_gnn(stage_dir("models") / ("gnn_lead" + std::to_string(lead_hours)));
    auto feats = features_for(p, cfg_.artifacts, m.config().use_rh);
    auto graph = build_graph(points_of(p.meta.stations), m.config().radius_km);
    auto theta = standardized_theta(p);
    auto step = [&](const std::vector<double>& x) {
      return gnn_predict_batch(m, feats, graph, x, 1);
    };
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> x(theta.begin() + static_cast<std::ptrdiff_t>(uz(inputs[k]) * S),
                            theta.begin() + static_cast<std::ptrdiff_t>((uz(inputs[k]) + 1) * S));
      auto y = tptkit::rollout(step, std::move(x), steps);
      for (std::size_t s = 0; s < S; ++s) theta_pred[k * S + s] = p.station_std.invert(y[s]);
    }
  } else if (model == "cnn") {
    auto mesh = load_mesh(cfg_.artifacts);
    auto m = load_cnn(stage_dir("models") / ("cnn_lead" + std::to_string(lead_hours)), mesh.masks.enlarged);
    auto fields = standardized_mesh(mesh);
    const std::size_t px = mesh.seq.grid.size();
    auto pts = points_of(p.meta.stations);
    auto step = [&](const std::vector<double>& x) { return cnn_predict_batch(m, x, 1); };
    std::vector<double> frame(px);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> x(fields.begin() + static_cast<std::ptrdiff_t>(uz(inputs[k]) * px),
                            fields.begin() + static_cast<std::ptrdiff_t>((uz(inputs[k]) + 1) * px));
      auto y = tptkit::rollout(step, std::move(x), steps);
      for (std::size_t i = 0; i < px; ++i) frame[i] = mesh.masks.enlarged[i] ? mesh.std.invert(y[i]) : 0.0;
      auto at = sample_bilinear(mesh.seq.grid, frame, pts);
      std::copy(at.begin(), at.end(), theta_pred.begin() + static_cast<std::ptrdiff_t>(k * S));
    }
  } else {
    throw ConfigError("rollout supports gnn and cnn models");
  }

  const int total = lead_hours * steps;
  const std::string tag = lead_tag(model + "-rollout" + std::to_string(lead_hours) + "x" +
                                       std::to_string(steps),
                                   total, split);
  auto temps = to_temperature(p, clim, theta_pred, valid);
  auto path = stage_dir("predictions") / (tag + ".csv");
  write_forecast_csv(path, p.meta, total, temps, valid);
  record("rollout:" + tag, 0, {path});
  return {{"model", model}, {"lead_hours", lead_hours}, {"steps", steps},
          {"instances", K}, {"file", path.generic_string()}};
}

void Pipeline::refresh_predictions(int lead_hours, SplitLabel split) {
  auto csv = [&](const std::string& m) {
    return stage_dir("predictions") / (lead_tag(m, lead_hours, split) + ".csv");
  };
  for (const char* m : {"persistence", "climatology"})
    if (!fs::exists(csv(m))) predict(m, lead_hours, split);
  for (const char* m : {"gnn", "cnn"}) {
    auto bin = stage_dir("models") / (std::string(m) + "_lead" + std::to_string(lead_hours) + ".bin");
    if (!fs::exists(bin)) continue;
    if (!fs::exists(csv(m)) || fs::last_write_time(csv(m)) < fs::last_write_time(bin))
      predict(m, lead_hours, split);
  }
}

json Pipeline::evaluate(const EvaluateOptions& opt) {
  Dataset truth;
  std::string truth_desc;
  if (opt.truth && fs::exists(*opt.truth / "observations.csv")) {
    auto grid = infer_time_grid(*opt.truth);
    truth = tptkit::ingest(*opt.truth / "stations.csv", *opt.truth / "observations.csv", grid,
                           cfg_.synth.box).dataset;
    truth_desc = (*opt.truth).generic_string();
  } else {
    fs::path art = opt.truth ? *opt.truth : cfg_.artifacts;
    truth = load_stage_dataset(art / "qc", "qc");
    truth_desc = opt.truth ? (art / "qc").generic_string() : "qc";
  }
  const int ls = lead_steps(truth.grid, opt.lead_hours);
  const auto T = uz(truth.grid.count());

  std::vector<std::int64_t> valid;
  bool have_split = fs::exists(stage_dir("transform") / "split.json");
  if (have_split) {
    auto split = split_from_string(io::read_json(stage_dir("transform") / "split.json").at("labels"));
    if (split.size() != T) throw ConfigError("truth grid does not match the transform split");
    const auto inputs = sample_times(split, T, ls)[static_cast<std::size_t>(opt.split)];
    for (auto t : inputs) valid.push_back(t + ls);
  } else {
    for (std::size_t t = uz(ls); t < T; ++t) valid.push_back(static_cast<std::int64_t>(t));
  }

  struct Entry {
    std::string name;
    ForecastTable table;
  };
  std::vector<Entry> entries;
  const std::string suffix = "_lead" + std::to_string(opt.lead_hours) + "_" + to_string(opt.split) + ".csv";
  if (opt.pred) {
    std::string name = opt.label.empty() ? opt.pred->stem().string() : opt.label;
    entries.push_back({name, read_forecast_csv(*opt.pred, truth, opt.lead_hours)});
  } else {
    if (have_split) refresh_predictions(opt.lead_hours, opt.split);
    std::vector<fs::path> files;
    if (fs::exists(stage_dir("predictions")))
      for (const auto& e : fs::directory_iterator(stage_dir("predictions"))) {
        auto n = e.path().filename().string();
        if (n.size() > suffix.size() && n.ends_with(suffix)) files.push_back(e.path());
      }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto n = f.filename().string();
      entries.push_back({n.substr(0, n.size() - suffix.size()), read_forecast_csv(f, truth, opt.lead_hours)});
    }
    auto nwp = cfg_.corpus / "external_nwp.csv";
    if (fs::exists(nwp)) {
      auto tab = read_forecast_csv(nwp, truth, opt.lead_hours);
      if (tab.rows > tab.rows_unmatched) entries.push_back({"nwp", std::move(tab)});
    }
  }
  if (entries.empty())
    throw MissingArtifactError("no predictions for lead " + std::to_string(opt.lead_hours) +
                               " h (run `tptkit predict` first)");

  std::vector<EvalReport> reports;
  for (auto& e : entries) reports.push_back(evaluate_forecast(e.name, e.table, truth, valid));

  auto is_baseline = [](const std::string& n) {
    return n == "persistence" || n == "climatology" || n == "nwp" || n == "external";
  };
  std::size_t primary = 0;
  int rank = 4;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& n = reports[i].model;
    int r = n == "gnn" ? 0 : n == "cnn" ? 1 : !is_baseline(n) ? 2 : 3;
    if (r < rank) rank = r, primary = i;
  }

  // ITS per station for the scatter extract
  std::vector<double> its(truth.stations.size(), kNaN);
  if (fs::exists(stage_dir("stats") / "its.csv")) {
    std::ifstream in(stage_dir("stats") / "its.csv");
    std::string line;
    std::getline(in, line);
    std::map<std::string, double> byid;
    while (std::getline(in, line)) {
      auto f = io::split_csv(line);
      if (f.size() == 2 && !f[1].empty()) byid[std::string(f[0])] = io::parse_double(f[1], "its.csv");
    }
    for (std::size_t s = 0; s < truth.stations.size(); ++s)
      if (auto it = byid.find(truth.stations[s].id); it != byid.end()) its[s] = it->second;
  }
  std::vector<double> rmse_by_station(truth.stations.size(), kNaN);
  {
    std::map<std::string, double> byid;
    for (std::size_t i = 0; i < reports[primary].station_ids.size(); ++i)
      byid[reports[primary].station_ids[i]] = reports[primary].rmse_station[i];
    for (std::size_t s = 0; s < truth.stations.size(); ++s)
      if (auto it = byid.find(truth.stations[s].id); it != byid.end()) rmse_by_station[s] = it->second;
  }
  auto scatter = scatter_extract(truth.stations, rmse_by_station, its, cfg_.gnn.radius_km);

  // mesh metrics for models that left a mesh sequence
  json mesh_j = json::array();
  json bw_j = nullptr;
  const std::string mesh_suffix = "_lead" + std::to_string(opt.lead_hours) + "_" + to_string(opt.split) + "_mesh.json";
  if (!opt.pred && fs::exists(stage_dir("predictions")) && fs::exists(stage_dir("krige") / "theta_mesh.json")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(stage_dir("predictions"))) {
      auto n = e.path().filename().string();
      if (n.ends_with(mesh_suffix)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (!files.empty()) {
      auto mesh = load_mesh(cfg_.artifacts);
      const std::size_t px = mesh.seq.grid.size();
      for (const auto& f : files) {
        auto stem = f;
        stem.replace_extension();
        auto pred = read_mesh_sequence(stem);
        std::vector<double> tv(pred.values.size());
        for (std::size_t k = 0; k < pred.timestamps.size(); ++k) {
          auto t = mesh.seq.grid == pred.grid ? truth.grid.index_of(pred.timestamps[k]) : std::nullopt;
          if (!t) throw InputError(f.string() + ": timestamps or grid do not match the kriged mesh");
          auto src = mesh.seq.frame(uz(*t));
          std::copy(src.begin(), src.end(), tv.begin() + static_cast<std::ptrdiff_t>(k * px));
        }
        auto name = f.filename().string();
        name = name.substr(0, name.size() - mesh_suffix.size());
        double rm = rmse_mesh(pred.values, tv, mesh.masks.inland, pred.timestamps.size());
        mesh_j.push_back({{"model", name}, {"rmse_mesh", rm}});
        if (bw_j.is_null()) {
          auto inst = instance_rmse(pred.values, tv, mesh.masks.inland, pred.timestamps.size());
          auto bw = best_worst(inst);
          bw_j = {{"model", name},
                  {"space", "theta_prime_mesh_inland"},
                  {"best", {{"timestamp", format_timestamp(pred.timestamps[bw.best])}, {"rmse", bw.best_error}}},
                  {"worst", {{"timestamp", format_timestamp(pred.timestamps[bw.worst])}, {"rmse", bw.worst_error}}}};
        }
      }
    }
  }
  if (bw_j.is_null()) {
    // per-instance station RMSE of the primary model
    const auto& tab = entries[primary].table;
    const std::size_t S = truth.stations.size();
    std::vector<double> inst;
    std::vector<std::int64_t> at;
    for (auto t : valid) {
      double s2 = 0.0;
      std::size_t n = 0;
      for (std::size_t s = 0; s < S; ++s) {
        double e = tab.temp_k[uz(t) * S + s] - truth.series[s].values[uz(t)];
        if (std::isfinite(e)) s2 += e * e, ++n;
      }
      if (n) {
        inst.push_back(std::sqrt(s2 / static_cast<double>(n)));
        at.push_back(t);
      }
    }
    if (!inst.empty()) {
      auto bw = best_worst(inst);
      bw_j = {{"model", reports[primary].model},
              {"space", "temperature_stations"},
              {"best", {{"timestamp", format_timestamp(truth.grid.time_at(at[bw.best]))}, {"rmse", bw.best_error}}},
              {"worst", {{"timestamp", format_timestamp(truth.grid.time_at(at[bw.worst]))}, {"rmse", bw.worst_error}}}};
    }
  }

  fs::path out = opt.out ? *opt.out : cfg_.reports;
  json models = json::array();
  for (const auto& r : reports) models.push_back(r.to_json());
  json summary = {{"lead_hours", opt.lead_hours},
                  {"split", have_split ? json(to_string(opt.split)) : json("all")},
                  {"truth", truth_desc},
                  {"valid_times", valid.size()},
                  {"primary", reports[primary].model},
                  {"models", models},
                  {"mesh", mesh_j},
                  {"best_worst", bw_j}};
  io::write_json(out / "summary.json", summary);
  write_rmse_station_csv(out / "rmse_station.csv", reports);
  write_monthly_csv(out / "monthly.csv", reports);
  write_scatter_csv(out / "scatter.csv", scatter);
  io::write_json(out / "best_worst.json", bw_j);
  record("evaluate", 0, {out / "summary.json", out / "rmse_station.csv", out / "monthly.csv",
                         out / "scatter.csv", out / "best_worst.json"});
  json brief = json::object();
  for (const auto& r : reports) brief[r.model] = r.rmse;
  return {{"lead_hours", opt.lead_hours}, {"rmse", brief}, {"out", out.generic_string()}};
}

json Pipeline::sweep(const std::vector<int>& widths, int lead_hours) {
  if (widths.empty()) throw ConfigError("sweep needs at least one width");
  auto p = load_prepared(cfg_.artifacts);
  auto mesh = load_mesh(cfg_.artifacts);
  auto fields = standardized_mesh(mesh);
  const int ls = lead_steps(p.meta.grid, lead_hours);
  const auto T = uz(p.meta.grid.count());
  const std::size_t px = mesh.seq.grid.size();
  auto tc = cfg_.train_config("sweep", lead_hours);
  const auto val_t = sample_times(p.split, T, ls)[static_cast<std::size_t>(SplitLabel::val)];
  json rows = json::array();
  for (int w : widths) {
    auto cc = cfg_.cnn;
    cc.predictor_width = w;
    CnnModel m(cc, mesh.masks.enlarged);
    MeshProblem prob(m, mesh.masks.inland, fields, T, ls, p.split);
    auto hist = tptkit::train(prob, tc, [&](int e, double tr, double va) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "sweep width %d epoch %d train %.6f val %.6f", w, e, tr, va);
      say(verbose_, buf);
    });
    double rm = kNaN;
    if (!val_t.empty()) {
      std::vector<double> pred(val_t.size() * px), tv(val_t.size() * px);
      for (std::size_t k0 = 0; k0 < val_t.size(); k0 += kPredictBatch) {
        const std::size_t k1 = std::min(val_t.size(), k0 + kPredictBatch);
        std::vector<double> frames((k1 - k0) * px);
        for (std::size_t k = k0; k < k1; ++k)
          std::copy_n(fields.begin() + static_cast<std::ptrdiff_t>(uz(val_t[k]) * px), px,
                      frames.begin() + static_cast<std::ptrdiff_t>((k - k0) * px));
        auto out = cnn_predict_batch(m, frames, static_cast<int>(k1 - k0));
        for (std::size_t k = k0; k < k1; ++k)
          for (std::size_t i = 0; i < px; ++i) {
            pred[k * px + i] = mesh.masks.enlarged[i] ? mesh.std.invert(out[(k - k0) * px + i]) : 0.0;
            tv[k * px + i] = mesh.seq.values[(uz(val_t[k]) + uz(ls)) * px + i];
          }
      }
      rm = rmse_mesh(pred, tv, mesh.masks.inland, val_t.size());
    }
    rows.push_back({{"width", w},
                    {"parameters", m.params().scalar_count()},
                    {"train_loss", hist.train.back()},
                    {"val_loss", hist.val.back()},
                    {"val_rmse_mesh", rm}});
  }
  auto out = cfg_.reports;
  io::write_json(out / "sweep.json", {{"lead_hours", lead_hours}, {"model", "cnn"}, {"rows", rows}});
  io::write_atomic(out / "sweep.csv", [&](std::ostream& o) {
    o << "width,parameters,train_loss,val_loss,val_rmse_mesh\n";
    for (const auto& r : rows)
      o << r["width"].get<int>() << ',' << r["parameters"].get<std::size_t>() << ','
        << io::format_double(r["train_loss"].get<double>()) << ','
        << io::format_double(r["val_loss"].get<double>()) << ','
        << (r["val_rmse_mesh"].is_null() ? std::string() : io::format_double(r["val_rmse_mesh"].get<double>()))
        << '\n';
  });
  record("sweep", tc.seed, {out / "sweep.csv", out / "sweep.json"});
  return {{"lead_hours", lead_hours}, {"rows", rows}};
}

json Pipeline::report() {
  auto out = cfg_.reports;
  io::require_artifact(out / "summary.json", "evaluate");
  auto summary = io::read_json(out / "summary.json");
  std::ostringstream md;
  md << "# tptkit report\n\n";
  md << "Lead " << summary["lead_hours"].get<int>() << " h, split " << summary["split"].get<std::string>()
     << ", " << summary["valid_times"].get<std::size_t>() << " valid times.\n\n";
  md << "| model | RMSE (K) | stations | coverage |\n|---|---|---|---|\n";
  for (const auto& m : summary["models"]) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "| %s | %.4f | %zu | %.4f |\n", m["model"].get<std::string>().c_str(),
                  m["rmse"].get<double>(), m["stations"].get<std::size_t>(), m["coverage"].get<double>());
    md << buf;
  }
  if (!summary["mesh"].empty()) {
    md << "\n| model | mesh RMSE (K, inland) |\n|---|---|\n";
    for (const auto& m : summary["mesh"]) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "| %s | %.4f |\n", m["model"].get<std::string>().c_str(),
                    m["rmse_mesh"].get<double>());
      md << buf;
    }
  }
  if (!summary["best_worst"].is_null()) {
    const auto& bw = summary["best_worst"];
    md << "\nBest instance " << bw["best"]["timestamp"].get<std::string>() << ", worst "
       << bw["worst"]["timestamp"].get<std::string>() << " (" << bw["model"].get<std::string>() << ").\n";
  }
  json rep = {{"evaluate", summary}};
  auto add_json = [&](const char* key, const fs::path& path) {
    if (fs::exists(path)) rep[key] = io::read_json(path);
  };
  add_json("qc", stage_dir("qc") / "report.json");
  add_json("stats", stage_dir("stats") / "summary.json");
  add_json("sweep", out / "sweep.json");
  if (fs::exists(stage_dir("krige") / "roundtrip.json")) {
    auto rt = io::read_json(stage_dir("krige") / "roundtrip.json");
    rt.erase("rmse_per_station");
    rep["krige_roundtrip"] = rt;
    char buf[96];
    std::snprintf(buf, sizeof buf, "\nKriging round trip RMSE: %.4f K.\n", rt["mean_rmse_k"].get<double>());
    md << buf;
  }
  if (rep.contains("qc")) {
    rep["qc"].erase("stations");
    char buf[96];
    std::snprintf(buf, sizeof buf, "QC replaced fraction: %.5f.\n", rep["qc"]["replaced_fraction"].get<double>());
    md << buf;
  }
  if (rep.contains("stats")) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "Mean integral time scale: %.2f h.\n", rep["stats"]["mean_its_hours"].get<double>());
    md << buf;
  }
  if (rep.contains("sweep")) {
    md << "\n| predictor width | parameters | val mesh RMSE (K) |\n|---|---|---|\n";
    for (const auto& r : rep["sweep"]["rows"]) {
      md << "| " << r["width"].get<int>() << " | " << r["parameters"].get<std::size_t>() << " | "
         << (r["val_rmse_mesh"].is_null() ? std::string("-") : io::format_double(r["val_rmse_mesh"].get<double>()))
         << " |\n";
    }
  }
  io::write_text_atomic(out / "report.md", md.str());
  io::write_json(out / "report.json", rep);
  record("report", 0, {out / "report.md", out / "report.json"});
  return {{"report", (out / "report.md").generic_string()}};
}

} // namespace tptkit
