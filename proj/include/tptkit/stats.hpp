#pragma once

#include <span>
#include <string>
#include <vector>

#include "tptkit/gridding.hpp"

namespace tptkit {

struct AutocorrResult {
  std::string station_id;
  double step_hours = 1.0;
  std::vector<double> rho; // rho[k] at lag k·step
  double its_hours = 0.0;
};

/// ρ(s) = mean_t[x(t)x(t+s)] / mean_t[x(t)²] for s = 0..max_lag samples.
/// Throws DegenerateError for a series with zero variance.
std::vector<double> autocorrelation(std::span<const double> series,
                                    std::size_t max_lag);

/// Trapezoidal integral of ρ up to and including its first non-positive
/// sample (or to the last lag when it never crosses zero), in hours.
double integral_time_scale(std::span<const double> rho, double step_hours);

enum class Direction { longitudinal, latitudinal };
const char* to_string(Direction d);

struct SpatialCorrResult {
  Direction direction = Direction::longitudinal;
  std::string region;
  std::vector<double> r_m;
  std::vector<double> corr;
  std::vector<std::int64_t> pairs; // per snapshot
  std::size_t snapshots_used = 0;
  std::size_t snapshots_skipped = 0;
};

/// Time-averaged normalized spatial covariance of mesh fields at offsets
/// k·dx along one axis, restricted to `region`. Mean and variance are taken
/// per snapshot over the region. Separations with fewer than `min_pairs`
/// pairs are dropped; zero-variance snapshots are skipped.
SpatialCorrResult spatial_correlation(const GridSpec& grid,
                                      std::span<const double> fields,
                                      std::size_t snapshots,
                                      Direction direction, const Mask& region,
                                      std::string region_name,
                                      std::int64_t min_pairs = 100);

struct StandardizeParams {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double v) const { return v * std + mean; }
};

/// Population mean and standard deviation; DegenerateError if std is 0.
StandardizeParams fit_standardize(std::span<const double> values);
std::vector<double> standardize(std::span<const double> values,
                                const StandardizeParams& p);
std::vector<double> unstandardize(std::span<const double> values,
                                  const StandardizeParams& p);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

} // namespace tptkit
