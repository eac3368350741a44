#include "tptkit/gridding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tptkit/io.hpp"
#include "tptkit/parallel.hpp"

namespace tptkit {

bool GridSpec::contains(const Point2& p) const {
  const double fx = (p.x - origin_e) / dx;
  const double fy = (p.y - origin_n) / dx;
  return fx >= 0 && fy >= 0 && fx <= nx - 1 && fy <= ny - 1;
}

GridSpec GridSpec::covering(std::span<const Point2> points, int nx, int ny,
                            double dx) {
  if (points.empty()) {
    throw ConfigError("cannot size a grid without points");
  }
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (xmax - xmin > (nx - 1) * dx || ymax - ymin > (ny - 1) * dx) {
    throw ConfigError("grid " + std::to_string(nx) + "x" + std::to_string(ny) +
                      " at " + std::to_string(dx) +
                      " m does not cover the station extent");
  }
  GridSpec g;
  g.nx = nx;
  g.ny = ny;
  g.dx = dx;
  g.origin_e = std::floor((0.5 * (xmin + xmax) - 0.5 * (nx - 1) * dx) / dx) * dx;
  g.origin_n = std::floor((0.5 * (ymin + ymax) - 0.5 * (ny - 1) * dx) / dx) * dx;
  // Snapping to a multiple of dx can push the far edge in by one cell.
  if (g.origin_e + (nx - 1) * dx < xmax) {
    g.origin_e += dx;
  }
  if (g.origin_n + (ny - 1) * dx < ymax) {
    g.origin_n += dx;
  }
  return g;
}

nlohmann::json GridSpec::to_json() const {
  return {{"nx", nx},
          {"ny", ny},
          {"dx_m", dx},
          {"origin_e", origin_e},
          {"origin_n", origin_n}};
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
  GridSpec g;
  g.nx = j.at("nx").get<int>();
  g.ny = j.at("ny").get<int>();
  g.dx = j.at("dx_m").get<double>();
  g.origin_e = j.at("origin_e").get<double>();
  g.origin_n = j.at("origin_n").get<double>();
  if (g.nx < 2 || g.ny < 2 || !(g.dx > 0)) {
    throw ConfigError("grid needs at least 2x2 nodes and positive spacing");
  }
  return g;
}

MaskSet build_masks(const GridSpec& grid, const Mask& land, double buffer_km) {
  if (land.size() != grid.size()) {
    throw ShapeError("land grid has " + std::to_string(land.size()) +
                     " cells, grid expects " + std::to_string(grid.size()));
  }
  if (buffer_km < 0) {
    throw ConfigError("mask buffer must be non-negative");
  }
  MaskSet m;
  m.grid = grid;
  m.land = land;
  m.inland = land;
  m.enlarged.assign(grid.size(), 0);
  const double r = buffer_km * 1000.0 / grid.dx;
  const int reach = static_cast<int>(std::floor(r + 1e-9));
  const double r2 = r * r * (1.0 + 1e-12);
  std::vector<std::pair<int, int>> offsets;
  for (int dj = -reach; dj <= reach; ++dj) {
    for (int di = -reach; di <= reach; ++di) {
      if (static_cast<double>(di * di + dj * dj) <= r2) {
        offsets.emplace_back(di, dj);
      }
    }
  }
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix < grid.nx; ++ix) {
      if (!land[grid.index(ix, iy)]) {
        continue;
      }
      for (const auto& [di, dj] : offsets) {
        const int x = ix + di, y = iy + dj;
        if (x >= 0 && y >= 0 && x < grid.nx && y < grid.ny) {
          m.enlarged[grid.index(x, y)] = 1;
        }
      }
    }
  }
  m.n_inland = static_cast<std::size_t>(
      std::count(m.inland.begin(), m.inland.end(), std::uint8_t{1}));
  m.n_enlarged = static_cast<std::size_t>(
      std::count(m.enlarged.begin(), m.enlarged.end(), std::uint8_t{1}));
  return m;
}

Mask read_land_grid(const std::filesystem::path& path, const GridSpec& grid) {
  io::require_artifact(path, "synth");
  const std::string text = io::read_text(path);
  Mask land(grid.size(), 0);
  std::vector<int> cells;
  if (path.extension() == ".pgm") {
    std::istringstream in(text);
    std::string magic;
    in >> magic;
    auto next_int = [&]() {
      std::string tok;
      while (in >> tok) {
        if (tok[0] == '#') {
          std::string rest;
          std::getline(in, rest);
          continue;
        }
        return std::stoi(tok);
      }
      throw InputError(path.string() + ": truncated PGM header");
    };
    if (magic != "P2") {
      throw InputError(path.string() + ": only plain (P2) PGM is supported");
    }
    const int w = next_int(), h = next_int();
    next_int(); // maxval
    if (w != grid.nx || h != grid.ny) {
      throw ShapeError(path.string() + ": PGM size does not match the grid");
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
      cells.push_back(next_int());
    }
  } else {
    std::istringstream in(text);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") {
        continue;
      }
      const auto f = io::split_csv(line);
      if (static_cast<int>(f.size()) != grid.nx) {
        throw ShapeError(path.string() + ": row width does not match the grid");
      }
      for (auto v : f) {
        cells.push_back(v == "0" ? 0 : 1);
      }
      ++rows;
    }
    if (rows != grid.ny) {
      throw ShapeError(path.string() + ": row count does not match the grid");
    }
  }
  for (int r = 0; r < grid.ny; ++r) {
    const int iy = grid.ny - 1 - r;
    for (int ix = 0; ix < grid.nx; ++ix) {
      land[grid.index(ix, iy)] =
          cells[static_cast<std::size_t>(r * grid.nx + ix)] != 0;
    }
  }
  return land;
}

void write_land_grid(const std::filesystem::path& path, const GridSpec& grid,
                     const Mask& land) {
  const bool pgm = path.extension() == ".pgm";
  io::write_atomic(path, [&](std::ostream& o) {
    if (pgm) {
      o << "P2\n" << grid.nx << ' ' << grid.ny << "\n1\n";
    }
    for (int r = 0; r < grid.ny; ++r) {
      const int iy = grid.ny - 1 - r;
      for (int ix = 0; ix < grid.nx; ++ix) {
        if (ix > 0) {
          o << (pgm ? ' ' : ',');
        }
        o << (land[grid.index(ix, iy)] ? '1' : '0');
      }
      o << '\n';
    }
  });
}

VariogramKind parse_variogram_kind(const std::string& s) {
  if (s == "exponential") {
    return VariogramKind::exponential;
  }
  if (s == "spherical") {
    return VariogramKind::spherical;
  }
  if (s == "gaussian") {
    return VariogramKind::gaussian;
  }
  throw ConfigError("unknown variogram kind '" + s + "'");
}

const char* to_string(VariogramKind k) {
  switch (k) {
  case VariogramKind::exponential:
    return "exponential";
  case VariogramKind::spherical:
    return "spherical";
  case VariogramKind::gaussian:
    return "gaussian";
  }
  return "?";
}

double VariogramModel::shape(VariogramKind kind, double u) {
  switch (kind) {
  case VariogramKind::exponential:
    return 1.0 - std::exp(-u);
  case VariogramKind::gaussian:
    return 1.0 - std::exp(-u * u);
  case VariogramKind::spherical:
    return u >= 1.0 ? 1.0 : 1.5 * u - 0.5 * u * u * u;
  }
  return 0.0;
}

double VariogramModel::operator()(double h) const {
  if (h <= 0.0) {
    return 0.0;
  }
  return nugget + (sill - nugget) * shape(kind, h / range_m);
}

void VariogramModel::validate() const {
  if (!(nugget >= 0) || !(sill >= nugget) || !(range_m > 0)) {
    throw ConfigError("variogram needs 0 <= nugget <= sill and range > 0");
  }
}

nlohmann::json VariogramModel::to_json() const {
  return {{"kind", to_string(kind)},
          {"nugget", nugget},
          {"sill", sill},
          {"range_m", range_m}};
}

VariogramModel VariogramModel::from_json(const nlohmann::json& j) {
  VariogramModel v;
  v.kind = parse_variogram_kind(j.value("kind", std::string("exponential")));
  v.nugget = j.value("nugget", 0.0);
  v.sill = j.value("sill", 1.0);
  v.range_m = j.value("range_m", 50000.0);
  v.validate();
  return v;
}

VariogramAccumulator::VariogramAccumulator(double bin_width_m, double max_lag_m)
    : width_(bin_width_m), max_lag_(max_lag_m) {
  if (!(bin_width_m > 0) || !(max_lag_m > 0)) {
    throw ConfigError("variogram bin width and max lag must be positive");
  }
  const auto nb = static_cast<std::size_t>(std::ceil(max_lag_m / bin_width_m));
  dist_sum_.assign(nb, 0.0);
  sq_sum_.assign(nb, 0.0);
  count_.assign(nb, 0);
}

void VariogramAccumulator::add(std::span<const Point2> points,
                               std::span<const double> values) {
  if (points.size() != values.size()) {
    throw ShapeError("variogram points and values differ in length");
  }
  if (points.size() < 2) {
    throw InputError("empirical variogram needs at least 2 points");
  }
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double h = distance(points[a], points[b]);
      if (h <= 0.0 || h > max_lag_) {
        continue;
      }
      const auto k = std::min(static_cast<std::size_t>(h / width_),
                              count_.size() - 1);
      const double d = values[a] - values[b];
      dist_sum_[k] += h;
      sq_sum_[k] += 0.5 * d * d;
      ++count_[k];
    }
  }
}

std::vector<VariogramBin> VariogramAccumulator::bins() const {
  std::vector<VariogramBin> out;
  for (std::size_t k = 0; k < count_.size(); ++k) {
    if (count_[k] == 0) {
      continue;
    }
    const auto n = static_cast<double>(count_[k]);
    out.push_back({dist_sum_[k] / n, sq_sum_[k] / n, count_[k]});
  }
  return out;
}

std::vector<VariogramBin> empirical_variogram(std::span<const Point2> points,
                                              std::span<const double> values,
                                              double bin_width_m,
                                              double max_lag_m) {
  VariogramAccumulator acc(bin_width_m, max_lag_m);
  acc.add(points, values);
  return acc.bins();
}

namespace {

struct LinearFit {
  double nugget = 0.0;
  double partial = 0.0;
  double sse = INFINITY;
};

// Minimizes Σ w (n + c·g - y)² over n >= 0, c >= 0 for a fixed shape g.
LinearFit fit_linear(std::span<const VariogramBin> bins,
                     std::span<const double> w, VariogramKind kind,
                     double range) {
  const std::size_t m = bins.size();
  std::vector<double> g(m);
  double s_w = 0, s_g = 0, s_gg = 0, s_y = 0, s_gy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    g[k] = VariogramModel::shape(kind, bins[k].lag / range);
    s_w += w[k];
    s_g += w[k] * g[k];
    s_gg += w[k] * g[k] * g[k];
    s_y += w[k] * bins[k].semivariance;
    s_gy += w[k] * g[k] * bins[k].semivariance;
  }
  auto sse = [&](double n, double c) {
    double s = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const double r = n + c * g[k] - bins[k].semivariance;
      s += w[k] * r * r;
    }
    return s;
  };
  std::vector<LinearFit> candidates;
  const double det = s_w * s_gg - s_g * s_g;
  if (std::abs(det) > 1e-14 * s_w * s_gg) {
    const double n = (s_gg * s_y - s_g * s_gy) / det;
    const double c = (s_w * s_gy - s_g * s_y) / det;
    if (n >= 0 && c >= 0) {
      candidates.push_back({n, c, 0});
    }
  }
  if (s_gg > 0) {
    candidates.push_back({0.0, std::max(0.0, s_gy / s_gg), 0});
  }
  candidates.push_back({std::max(0.0, s_y / s_w), 0.0, 0});
  LinearFit best;
  for (auto& c : candidates) {
    c.sse = sse(c.nugget, c.partial);
    if (c.sse < best.sse) {
      best = c;
    }
  }
  return best;
}

} // namespace

VariogramModel fit_variogram(std::span<const VariogramBin> bins,
                             VariogramKind kind,
                             const VariogramFitOptions& opt) {
  if (bins.size() < 3) {
    throw InputError("variogram fit needs at least 3 non-empty bins, got " +
                     std::to_string(bins.size()));
  }
  std::vector<double> w(bins.size());
  double min_lag = INFINITY, max_lag = 0, scale = 0;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const double lag = bins[k].lag;
    if (!(lag > 0)) {
      throw InputError("variogram bins must have positive lags");
    }
    w[k] = static_cast<double>(bins[k].pairs) / (lag * lag);
    min_lag = std::min(min_lag, lag);
    max_lag = std::max(max_lag, lag);
    scale += w[k] * bins[k].semivariance * bins[k].semivariance;
  }
  const double lo = opt.range_min_m > 0 ? opt.range_min_m : 0.5 * min_lag;
  const double hi = opt.range_max_m > 0 ? opt.range_max_m : 20.0 * max_lag;
  if (!(hi > lo)) {
    throw ConfigError("variogram range bounds are empty");
  }
  const double tie = 1e-12 * (scale + 1e-300);

  auto eval = [&](double log_r) {
    return fit_linear(bins, w, kind, std::exp(log_r));
  };
  auto to_model = [&](double log_r, const LinearFit& f) {
    VariogramModel v;
    v.kind = kind;
    v.nugget = f.nugget;
    v.sill = f.nugget + f.partial;
    v.range_m = std::exp(log_r);
    return v;
  };

  constexpr int kScan = 121;
  const double a = std::log(lo), b = std::log(hi);
  int best_i = 0;
  double best_sse = INFINITY;
  std::vector<double> grid(kScan);
  for (int i = 0; i < kScan; ++i) {
    grid[static_cast<std::size_t>(i)] = a + (b - a) * i / (kScan - 1);
    const double s = eval(grid[static_cast<std::size_t>(i)]).sse;
    if (s < best_sse - tie) {
      best_sse = s;
      best_i = i;
    }
  }
  double best_log = grid[static_cast<std::size_t>(best_i)];
  LinearFit best_fit = eval(best_log);

  double left = grid[static_cast<std::size_t>(std::max(best_i - 1, 0))];
  double right = grid[static_cast<std::size_t>(std::min(best_i + 1, kScan - 1))];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = right - phi * (right - left), x2 = left + phi * (right - left);
  double f1 = eval(x1).sse, f2 = eval(x2).sse;
  bool converged = false;
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (right - left < 1e-10) {
      converged = true;
      break;
    }
    if (f1 < f2) {
      right = x2;
      x2 = x1;
      f2 = f1;
      x1 = right - phi * (right - left);
      f1 = eval(x1).sse;
    } else {
      left = x1;
      x1 = x2;
      f1 = f2;
      x2 = left + phi * (right - left);
      f2 = eval(x2).sse;
    }
  }
  const double refined = 0.5 * (left + right);
  const LinearFit refined_fit = eval(refined);
  if (refined_fit.sse < best_fit.sse - tie) {
    best_fit = refined_fit;
    best_log = refined;
  }
  VariogramModel result = to_model(best_log, best_fit);
  if (!converged) {
    throw FitError("variogram range search did not converge in " +
                       std::to_string(opt.max_iterations) + " iterations",
                   result);
  }
  return result;
}

OrdinaryKriging::OrdinaryKriging(std::vector<Point2> stations,
                                 VariogramModel vg,
                                 std::vector<std::string> ids)
    : stations_(std::move(stations)), vg_(vg) {
  vg_.validate();
  const std::size_t n = stations_.size();
  if (n < 2) {
    throw InputError("kriging needs at least 2 stations");
  }
  auto name = [&](std::size_t i) {
    return i < ids.size() ? ids[i] : "#" + std::to_string(i);
  };
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (distance(stations_[a], stations_[b]) < 1e-6) {
        throw NumericError("singular kriging system: stations " + name(a) +
                           " and " + name(b) + " coincide");
      }
    }
  }
  const auto N = static_cast<Eigen::Index>(n);
  system_.resize(N + 1, N + 1);
  for (Eigen::Index a = 0; a < N; ++a) {
    for (Eigen::Index b = 0; b < N; ++b) {
      system_(a, b) = vg_(distance(stations_[static_cast<std::size_t>(a)],
                                   stations_[static_cast<std::size_t>(b)]));
    }
    system_(a, N) = 1.0;
    system_(N, a) = 1.0;
  }
  system_(N, N) = 0.0;
  lu_.compute(system_);
  const double rcond = lu_.rcond();
  if (!(rcond > 1e-15)) {
    throw NumericError("singular kriging system (rcond " +
                       std::to_string(rcond) + ")");
  }
}

Eigen::MatrixXd OrdinaryKriging::rhs(std::span<const Point2> targets) const {
  const auto N = static_cast<Eigen::Index>(stations_.size());
  Eigen::MatrixXd b(N + 1, static_cast<Eigen::Index>(targets.size()));
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    const Point2& p = targets[static_cast<std::size_t>(j)];
    for (Eigen::Index a = 0; a < N; ++a) {
      b(a, j) = vg_(distance(stations_[static_cast<std::size_t>(a)], p));
    }
    b(N, j) = 1.0;
  }
  return b;
}

OrdinaryKriging::Solution OrdinaryKriging::solve(const Point2& target) const {
  const Eigen::MatrixXd b = rhs(std::span<const Point2>(&target, 1));
  Eigen::VectorXd x = lu_.solve(b.col(0));
  x += lu_.solve(b.col(0) - system_ * x);
  Solution s;
  const auto N = static_cast<Eigen::Index>(stations_.size());
  s.weights.assign(x.data(), x.data() + N);
  s.lagrange = x(N);
  return s;
}

double OrdinaryKriging::estimate(const Point2& target,
                                 std::span<const double> values) const {
  if (values.size() != stations_.size()) {
    throw ShapeError("kriging values do not match the station count");
  }
  const auto s = solve(target);
  double v = 0.0;
  for (std::size_t a = 0; a < values.size(); ++a) {
    v += s.weights[a] * values[a];
  }
  return v;
}

std::vector<double>
OrdinaryKriging::weight_matrix(std::span<const Point2> targets) const {
  const auto N = static_cast<Eigen::Index>(stations_.size());
  const auto M = static_cast<Eigen::Index>(targets.size());
  std::vector<double> out(static_cast<std::size_t>(N * M));
  constexpr Eigen::Index kBlock = 512;
  const auto blocks = static_cast<std::size_t>((M + kBlock - 1) / kBlock);
  parallel_for(0, blocks, [&](std::size_t blk) {
    const auto j0 = static_cast<Eigen::Index>(blk) * kBlock;
    const auto len = std::min(kBlock, M - j0);
    const Eigen::MatrixXd b =
        rhs(targets.subspan(static_cast<std::size_t>(j0),
                            static_cast<std::size_t>(len)));
    Eigen::MatrixXd x = lu_.solve(b);
    const Eigen::MatrixXd residual = b - system_ * x;
    x += lu_.solve(residual);
    for (Eigen::Index j = 0; j < len; ++j) {
      for (Eigen::Index a = 0; a < N; ++a) {
        out[static_cast<std::size_t>((j0 + j) * N + a)] = x(a, j);
      }
    }
  });
  return out;
}

MeshKriger::MeshKriger(const OrdinaryKriging& kriging, const MaskSet& masks)
    : masks_(masks), n_stations_(kriging.size()) {
  std::vector<Point2> targets;
  for (std::size_t k = 0; k < masks.grid.size(); ++k) {
    if (masks.enlarged[k]) {
      nodes_.push_back(k);
      targets.push_back(masks.grid.node(k));
    }
  }
  weights_ = kriging.weight_matrix(targets);
}

void MeshKriger::krige_into(std::span<const double> station_values,
                            std::span<double> out) const {
  if (station_values.size() != n_stations_) {
    throw ShapeError("kriging values do not match the station count");
  }
  if (out.size() != masks_.grid.size()) {
    throw ShapeError("kriging output does not match the grid");
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    const double* w = weights_.data() + j * n_stations_;
    double v = 0.0;
    for (std::size_t a = 0; a < n_stations_; ++a) {
      v += w[a] * station_values[a];
    }
    out[nodes_[j]] = v;
  }
}

MeshField MeshKriger::krige(std::span<const double> station_values,
                            TimePoint timestamp) const {
  MeshField f;
  f.grid = masks_.grid;
  f.timestamp = timestamp;
  f.values.resize(f.grid.size());
  krige_into(station_values, f.values);
  return f;
}

MeshField krige_field(std::span<const Point2> stations,
                      std::span<const double> values, const VariogramModel& vg,
                      const MaskSet& masks, TimePoint timestamp) {
  const OrdinaryKriging ok(std::vector<Point2>(stations.begin(), stations.end()),
                           vg);
  return MeshKriger(ok, masks).krige(values, timestamp);
}

std::vector<double> sample_bilinear(const GridSpec& grid,
                                    std::span<const double> values,
                                    std::span<const Point2> points) {
  if (values.size() != grid.size()) {
    throw ShapeError("field does not match the grid");
  }
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double fx = (points[i].x - grid.origin_e) / grid.dx;
    const double fy = (points[i].y - grid.origin_n) / grid.dx;
    if (!(fx >= 0 && fy >= 0 && fx <= grid.nx - 1 && fy <= grid.ny - 1)) {
      throw RangeError("point (" + std::to_string(points[i].x) + ", " +
                       std::to_string(points[i].y) +
                       ") outside the grid extent");
    }
    const int ix = std::min(static_cast<int>(fx), grid.nx - 2);
    const int iy = std::min(static_cast<int>(fy), grid.ny - 2);
    const double tx = fx - ix, ty = fy - iy;
    const double v00 = values[grid.index(ix, iy)];
    const double v10 = values[grid.index(ix + 1, iy)];
    const double v01 = values[grid.index(ix, iy + 1)];
    const double v11 = values[grid.index(ix + 1, iy + 1)];
    out[i] = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 +
             (1 - tx) * ty * v01 + tx * ty * v11;
  }
  return out;
}

RoundtripReport roundtrip_report(const MeshKriger& kriger,
                                 std::span<const Point2> stations,
                                 std::span<const double> values,
                                 std::size_t snapshots) {
  const std::size_t ns = stations.size();
  if (values.size() != ns * snapshots || kriger.station_count() != ns) {
    throw ShapeError("round-trip values do not match stations x snapshots");
  }
  const GridSpec& grid = kriger.masks().grid;
  std::vector<double> sq(snapshots * ns);
  parallel_for(0, snapshots, [&](std::size_t t) {
    std::vector<double> field(grid.size());
    const auto obs = values.subspan(t * ns, ns);
    kriger.krige_into(obs, field);
    const auto back = sample_bilinear(grid, field, stations);
    for (std::size_t s = 0; s < ns; ++s) {
      const double d = back[s] - obs[s];
      sq[t * ns + s] = d * d;
    }
  });
  RoundtripReport r;
  r.snapshots = snapshots;
  r.rmse_per_station.assign(ns, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    double acc = 0.0;
    for (std::size_t t = 0; t < snapshots; ++t) {
      acc += sq[t * ns + s];
    }
    r.rmse_per_station[s] = std::sqrt(acc / static_cast<double>(snapshots));
    r.mean_rmse += r.rmse_per_station[s];
  }
  r.mean_rmse /= static_cast<double>(ns);
  return r;
}

void write_mesh_sequence(const std::filesystem::path& stem,
                         const MeshSequence& seq) {
  if (seq.values.size() != seq.grid.size() * seq.timestamps.size()) {
    throw ShapeError("mesh sequence payload does not match its header");
  }
  nlohmann::json header = seq.grid.to_json();
  std::vector<std::string> ts;
  ts.reserve(seq.timestamps.size());
  for (const auto t : seq.timestamps) {
    ts.push_back(format_timestamp(t));
  }
  header["timestamps"] = ts;
  header["layout"] = "row-major [time][ny][nx] float64 little-endian";
  std::filesystem::path bin = stem, hdr = stem;
  bin += ".bin";
  hdr += ".json";
  io::write_atomic(
      bin,
      [&](std::ostream& o) {
        io::write_doubles_le(o, seq.values.data(), seq.values.size());
      },
      true);
  io::write_json(hdr, header);
}

MeshSequence read_mesh_sequence(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, hdr = stem;
  bin += ".bin";
  hdr += ".json";
  io::require_artifact(hdr, "krige");
  io::require_artifact(bin, "krige");
  const auto h = io::read_json(hdr);
  MeshSequence seq;
  seq.grid = GridSpec::from_json(h);
  for (const auto& s : h.at("timestamps")) {
    seq.timestamps.push_back(parse_timestamp(s.get<std::string>()));
  }
  seq.values.resize(seq.grid.size() * seq.timestamps.size());
  std::ifstream in(bin, std::ios::binary);
  io::read_doubles_le(in, seq.values.data(), seq.values.size());
  return seq;
}

} // namespace tptkit
