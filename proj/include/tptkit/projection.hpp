#pragma once

#include <utility>

namespace tptkit {

/// Geographic bounding box in degrees.
struct GeoBox {
  double lat_min = 33.041;
  double lat_max = 38.710;
  double lon_min = 124.839;
  double lon_max = 131.945;
  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min &&
           lon <= lon_max;
  }
};

/// Ellipsoidal transverse Mercator (Krüger n-series to fourth order).
/// Defaults are the EPSG:5179 registry parameters on GRS80.
class TransverseMercator {
public:
  struct Params {
    double a = 6378137.0;
    double inv_f = 298.257222101;
    double lat0_deg = 38.0;
    double lon0_deg = 127.5;
    double k0 = 0.9996;
    double false_easting = 1000000.0;
    double false_northing = 2000000.0;
  };

  TransverseMercator() : TransverseMercator(Params{}) {}
  explicit TransverseMercator(const Params& p);

  std::pair<double, double> forward(double lat_deg, double lon_deg) const;
  std::pair<double, double> inverse(double easting, double northing) const;

  const Params& params() const { return p_; }

private:
  std::pair<double, double> raw_forward(double lat_rad, double dlon_rad) const;

  Params p_;
  double e_ = 0, big_a_ = 0;
  double alpha_[4]{}, beta_[4]{}, delta_[4]{};
  double northing_origin_ = 0;
};

/// EPSG:5179 projection with a domain check; out-of-box input is a RangeError.
std::pair<double, double> project(double lat, double lon,
                                  const GeoBox& box = GeoBox{});
std::pair<double, double> unproject(double easting, double northing);

} // namespace tptkit
