#include "tptkit/height_adjust.hpp"

#include <cmath>

#include "tptkit/error.hpp"

namespace tptkit {

double HeightAdjustModel::pressure_hpa(double z) const {
  return p0_hpa * std::exp(-z / scale_height_m);
}

double HeightAdjustModel::factor(double z) const {
  return std::pow(p0_hpa / pressure_hpa(z), kappa);
}

nlohmann::json HeightAdjustModel::to_json() const {
  return {{"p0_hpa", p0_hpa}, {"kappa", kappa}, {"scale_height_m", scale_height_m}};
}

HeightAdjustModel HeightAdjustModel::from_json(const nlohmann::json& j) {
  HeightAdjustModel m;
  m.p0_hpa = j.value("p0_hpa", m.p0_hpa);
  m.kappa = j.value("kappa", m.kappa);
  m.scale_height_m = j.value("scale_height_m", m.scale_height_m);
  if (!(m.kappa > 0 && m.kappa < 1) || !(m.scale_height_m > 0) ||
      !(m.p0_hpa > 0)) {
    throw ConfigError("height model: kappa must lie in (0,1) and p0, H be "
                      "positive");
  }
  return m;
}

HeightAdjustModel fit_pressure_model(std::span<const double> altitudes_m,
                                     std::span<const double> mean_pressure_hpa,
                                     double p0_hpa, double kappa) {
  if (altitudes_m.size() != mean_pressure_hpa.size()) {
    throw ShapeError("altitude and pressure counts differ");
  }
  double szz = 0.0, szy = 0.0;
  double zmin = INFINITY, zmax = -INFINITY;
  std::size_t used = 0;
  for (std::size_t i = 0; i < altitudes_m.size(); ++i) {
    const double z = altitudes_m[i];
    const double p = mean_pressure_hpa[i];
    if (!std::isfinite(p) || !(p > 0)) {
      continue;
    }
    const double y = std::log(p / p0_hpa);
    szz += z * z;
    szy += z * y;
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
    ++used;
  }
  if (used < 2 || !(zmax > zmin) || szz <= 0) {
    throw DegenerateError(
        "pressure fit needs stations at two or more distinct altitudes");
  }
  const double slope = szy / szz;
  if (!(slope < 0)) {
    throw DegenerateError("fitted pressure does not decrease with altitude");
  }
  HeightAdjustModel m;
  m.p0_hpa = p0_hpa;
  m.kappa = kappa;
  m.scale_height_m = -1.0 / slope;
  return m;
}

double to_potential(double tprime, double z, const HeightAdjustModel& m) {
  return tprime * m.factor(z);
}

double from_potential(double theta_prime, double z,
                      const HeightAdjustModel& m) {
  return theta_prime / m.factor(z);
}

} // namespace tptkit
