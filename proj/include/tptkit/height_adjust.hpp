#pragma once

#include <span>

#include "json.hpp"

namespace tptkit {

/// Altitude factor f(z) = (p0 / P(z))^kappa with a barometric P(z) =
/// p0·exp(-z/H). Applied to fluctuations only.
struct HeightAdjustModel {
  double p0_hpa = 1000.0;
  double kappa = 0.2857;
  double scale_height_m = 8434.0;

  double pressure_hpa(double z) const;
  double factor(double z) const;

  nlohmann::json to_json() const;
  static HeightAdjustModel from_json(const nlohmann::json& j);
};

/// Least-squares fit of ln(P/p0) = -z/H over station mean pressures.
/// Needs at least two distinct altitudes.
HeightAdjustModel fit_pressure_model(std::span<const double> altitudes_m,
                                     std::span<const double> mean_pressure_hpa,
                                     double p0_hpa = 1000.0,
                                     double kappa = 0.2857);

double to_potential(double tprime, double z, const HeightAdjustModel& m);
double from_potential(double theta_prime, double z, const HeightAdjustModel& m);

} // namespace tptkit
