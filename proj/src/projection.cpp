#include "tptkit/projection.hpp"

#include <cmath>
#include <string>

#include "tptkit/error.hpp"

namespace tptkit {

namespace {
constexpr double kDeg = M_PI / 180.0;
}

TransverseMercator::TransverseMercator(const Params& p) : p_(p) {
  const double f = 1.0 / p.inv_f;
  const double n = f / (2.0 - f);
  const double n2 = n * n, n3 = n2 * n, n4 = n3 * n;
  e_ = std::sqrt(f * (2.0 - f));
  big_a_ = p.a / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0);

  alpha_[0] = n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180;
  alpha_[1] = 13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440;
  alpha_[2] = 61 * n3 / 240 - 103 * n4 / 140;
  alpha_[3] = 49561 * n4 / 161280;

  beta_[0] = n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360;
  beta_[1] = n2 / 48 + n3 / 15 - 437 * n4 / 1440;
  beta_[2] = 17 * n3 / 480 - 37 * n4 / 840;
  beta_[3] = 4397 * n4 / 161280;

  delta_[0] = 2 * n - 2 * n2 / 3 - 2 * n3 + 116 * n4 / 45;
  delta_[1] = 7 * n2 / 3 - 8 * n3 / 5 - 227 * n4 / 45;
  delta_[2] = 56 * n3 / 15 - 136 * n4 / 35;
  delta_[3] = 4279 * n4 / 630;

  northing_origin_ = raw_forward(p.lat0_deg * kDeg, 0.0).second;
}

std::pair<double, double> TransverseMercator::raw_forward(double phi,
                                                          double dlon) const {
  const double s = std::sin(phi);
  const double t = std::sinh(std::atanh(s) - e_ * std::atanh(e_ * s));
  const double xi_p = std::atan2(t, std::cos(dlon));
  const double eta_p = std::atanh(std::sin(dlon) / std::sqrt(1.0 + t * t));
  double xi = xi_p, eta = eta_p;
  for (int j = 1; j <= 4; ++j) {
    const double a = alpha_[j - 1];
    xi += a * std::sin(2 * j * xi_p) * std::cosh(2 * j * eta_p);
    eta += a * std::cos(2 * j * xi_p) * std::sinh(2 * j * eta_p);
  }
  return {p_.k0 * big_a_ * eta, p_.k0 * big_a_ * xi};
}

std::pair<double, double> TransverseMercator::forward(double lat_deg,
                                                      double lon_deg) const {
  const auto [x, y] =
      raw_forward(lat_deg * kDeg, (lon_deg - p_.lon0_deg) * kDeg);
  return {p_.false_easting + x, p_.false_northing + (y - northing_origin_)};
}

std::pair<double, double> TransverseMercator::inverse(double easting,
                                                      double northing) const {
  const double xi =
      (northing - p_.false_northing + northing_origin_) / (p_.k0 * big_a_);
  const double eta = (easting - p_.false_easting) / (p_.k0 * big_a_);
  double xi_p = xi, eta_p = eta;
  for (int j = 1; j <= 4; ++j) {
    const double b = beta_[j - 1];
    xi_p -= b * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
    eta_p -= b * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
  }
  const double chi = std::asin(std::sin(xi_p) / std::cosh(eta_p));
  double phi = chi;
  for (int j = 1; j <= 4; ++j) {
    phi += delta_[j - 1] * std::sin(2 * j * chi);
  }
  const double dlon = std::atan2(std::sinh(eta_p), std::cos(xi_p));
  return {phi / kDeg, p_.lon0_deg + dlon / kDeg};
}

std::pair<double, double> project(double lat, double lon, const GeoBox& box) {
  if (!box.contains(lat, lon)) {
    throw RangeError("coordinate (" + std::to_string(lat) + ", " +
                     std::to_string(lon) + ") outside the projection domain");
  }
  static const TransverseMercator tm;
  return tm.forward(lat, lon);
}

std::pair<double, double> unproject(double easting, double northing) {
  static const TransverseMercator tm;
  return tm.inverse(easting, northing);
}

} // namespace tptkit
