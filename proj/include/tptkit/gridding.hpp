#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/error.hpp"

namespace tptkit {

struct Point2 {
  double x = 0.0; // easting, m
  double y = 0.0; // northing, m
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Uniform square mesh on the projected plane. Node (ix, iy) sits at
/// (origin_e + ix·dx, origin_n + iy·dx); storage is row-major by iy.
struct GridSpec {
  int nx = 128;
  int ny = 128;
  double dx = 5000.0;
  double origin_e = 0.0;
  double origin_n = 0.0;

  std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  }
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(ix);
  }
  Point2 node(int ix, int iy) const {
    return {origin_e + ix * dx, origin_n + iy * dx};
  }
  Point2 node(std::size_t k) const {
    return node(static_cast<int>(k % static_cast<std::size_t>(nx)),
                static_cast<int>(k / static_cast<std::size_t>(nx)));
  }
  bool contains(const Point2& p) const;

  /// Grid of nx×ny nodes at spacing dx centred on the bounding box of
  /// `points`; throws ConfigError if it cannot cover them.
  static GridSpec covering(std::span<const Point2> points, int nx, int ny,
                           double dx);

  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& j);
  bool operator==(const GridSpec&) const = default;
};

using Mask = std::vector<std::uint8_t>;

struct MaskSet {
  GridSpec grid;
  Mask land;
  Mask enlarged; // land dilated by the buffer
  Mask inland;   // evaluation support (= land)
  std::size_t n_inland = 0;
  std::size_t n_enlarged = 0;
};

/// Enlarged mask = nodes whose centre lies within `buffer_km` of a land
/// node centre.
MaskSet build_masks(const GridSpec& grid, const Mask& land,
                    double buffer_km = 30.0);

/// Land grids as CSV of 0/1 or plain PGM; the first row is the northmost.
Mask read_land_grid(const std::filesystem::path& path, const GridSpec& grid);
void write_land_grid(const std::filesystem::path& path, const GridSpec& grid,
                     const Mask& land);

enum class VariogramKind { exponential, spherical, gaussian };
VariogramKind parse_variogram_kind(const std::string& s);
const char* to_string(VariogramKind k);

/// γ(h) = nugget + (sill - nugget)·g(h/range) for h > 0 and γ(0) = 0.
/// `range_m` is the scale parameter for the exponential and gaussian
/// shapes and the support radius for the spherical one.
struct VariogramModel {
  VariogramKind kind = VariogramKind::exponential;
  double nugget = 0.0;
  double sill = 1.0;
  double range_m = 50000.0;

  double operator()(double h) const;
  /// Unit shape g(h/range) without nugget/sill scaling.
  static double shape(VariogramKind kind, double h_over_range);
  void validate() const;

  nlohmann::json to_json() const;
  static VariogramModel from_json(const nlohmann::json& j);
};

struct VariogramBin {
  double lag = 0.0; // mean pair distance in the bin
  double semivariance = 0.0;
  std::int64_t pairs = 0;
};

/// Pools pair statistics over any number of snapshots.
class VariogramAccumulator {
public:
  VariogramAccumulator(double bin_width_m, double max_lag_m);
  void add(std::span<const Point2> points, std::span<const double> values);
  std::vector<VariogramBin> bins() const;

private:
  double width_, max_lag_;
  std::vector<double> dist_sum_, sq_sum_;
  std::vector<std::int64_t> count_;
};

std::vector<VariogramBin> empirical_variogram(std::span<const Point2> points,
                                              std::span<const double> values,
                                              double bin_width_m,
                                              double max_lag_m);

class FitError : public Error {
public:
  FitError(const std::string& what, VariogramModel best)
      : Error("fit", what), best_(best) {}
  const VariogramModel& best() const { return best_; }

private:
  VariogramModel best_;
};

struct VariogramFitOptions {
  int max_iterations = 200;
  double range_min_m = 0.0; // 0 = half the smallest lag
  double range_max_m = 0.0; // 0 = twenty times the largest lag
};

/// Weighted least squares (weights pairs/lag²) over nugget, sill and range.
/// Nugget and partial sill are solved exactly for each trial range; the
/// range is found by a log-spaced scan refined with golden-section search.
VariogramModel fit_variogram(std::span<const VariogramBin> bins,
                             VariogramKind kind,
                             const VariogramFitOptions& opt = {});

/// Ordinary kriging for a fixed station geometry. The augmented system is
/// factorized once and reused for every target point.
class OrdinaryKriging {
public:
  OrdinaryKriging(std::vector<Point2> stations, VariogramModel vg,
                  std::vector<std::string> ids = {});

  struct Solution {
    std::vector<double> weights;
    double lagrange = 0.0;
  };
  Solution solve(const Point2& target) const;
  double estimate(const Point2& target, std::span<const double> values) const;

  /// Weights for many targets at once, row-major [target][station].
  std::vector<double> weight_matrix(std::span<const Point2> targets) const;

  std::size_t size() const { return stations_.size(); }
  const std::vector<Point2>& stations() const { return stations_; }
  const VariogramModel& variogram() const { return vg_; }

private:
  Eigen::MatrixXd rhs(std::span<const Point2> targets) const;

  std::vector<Point2> stations_;
  VariogramModel vg_;
  Eigen::MatrixXd system_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

struct MeshField {
  GridSpec grid;
  TimePoint timestamp{};
  std::vector<double> values; // 0 outside the enlarged mask
};

/// Precomputed kriging weights for every enlarged-mask node of a grid.
class MeshKriger {
public:
  MeshKriger(const OrdinaryKriging& kriging, const MaskSet& masks);

  void krige_into(std::span<const double> station_values,
                  std::span<double> out) const;
  MeshField krige(std::span<const double> station_values,
                  TimePoint timestamp = {}) const;

  const MaskSet& masks() const { return masks_; }
  std::size_t station_count() const { return n_stations_; }

private:
  MaskSet masks_;
  std::size_t n_stations_;
  std::vector<std::size_t> nodes_;
  std::vector<double> weights_; // [node][station]
};

MeshField krige_field(std::span<const Point2> stations,
                      std::span<const double> values, const VariogramModel& vg,
                      const MaskSet& masks, TimePoint timestamp = {});

/// Bilinear blend of the four surrounding nodes; RangeError outside the grid.
std::vector<double> sample_bilinear(const GridSpec& grid,
                                    std::span<const double> values,
                                    std::span<const Point2> points);

struct RoundtripReport {
  std::vector<double> rmse_per_station;
  double mean_rmse = 0.0;
  std::size_t snapshots = 0;
};

/// RMSE between station values and the bilinear samples of their kriged
/// mesh. `values` is row-major [snapshot][station].
RoundtripReport roundtrip_report(const MeshKriger& kriger,
                                 std::span<const Point2> stations,
                                 std::span<const double> values,
                                 std::size_t snapshots);

/// Mesh sequence file: `<stem>.bin` holds [time][ny][nx] little-endian
/// doubles, `<stem>.json` holds {nx, ny, dx_m, origin_e, origin_n,
/// timestamps[]}.
struct MeshSequence {
  GridSpec grid;
  std::vector<TimePoint> timestamps;
  std::vector<double> values;

  std::span<const double> frame(std::size_t t) const {
    return {values.data() + t * grid.size(), grid.size()};
  }
  std::span<double> frame(std::size_t t) {
    return {values.data() + t * grid.size(), grid.size()};
  }
};

void write_mesh_sequence(const std::filesystem::path& stem,
                         const MeshSequence& seq);
MeshSequence read_mesh_sequence(const std::filesystem::path& stem);

} // namespace tptkit
