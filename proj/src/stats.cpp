#include "tptkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tptkit/error.hpp"

namespace tptkit {

std::vector<double> autocorrelation(std::span<const double> x,
                                    std::size_t max_lag) {
  const std::size_t n = x.size();
  if (n < 2 || max_lag >= n) {
    throw InputError("autocorrelation needs more samples than lags");
  }
  double mean = 0.0;
  for (double v : x) {
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0.0, sq = 0.0;
  for (double v : x) {
    var += (v - mean) * (v - mean);
    sq += v * v;
  }
  if (!(var > 1e-300 * static_cast<double>(n))) {
    throw DegenerateError("autocorrelation of a zero-variance series");
  }
  sq /= static_cast<double>(n);
  std::vector<double> rho(max_lag + 1);
  rho[0] = 1.0;
  for (std::size_t s = 1; s <= max_lag; ++s) {
    double acc = 0.0;
    for (std::size_t t = 0; t + s < n; ++t) {
      acc += x[t] * x[t + s];
    }
    rho[s] = acc / static_cast<double>(n - s) / sq;
  }
  return rho;
}

double integral_time_scale(std::span<const double> rho, double step_hours) {
  if (rho.empty()) {
    throw InputError("integral time scale of an empty correlation");
  }
  double its = 0.0;
  for (std::size_t k = 1; k < rho.size(); ++k) {
    its += 0.5 * (rho[k - 1] + rho[k]) * step_hours;
    if (rho[k] <= 0.0) {
      break;
    }
  }
  return its;
}

const char* to_string(Direction d) {
  return d == Direction::longitudinal ? "longitudinal" : "latitudinal";
}

SpatialCorrResult spatial_correlation(const GridSpec& grid,
                                      std::span<const double> fields,
                                      std::size_t snapshots,
                                      Direction direction, const Mask& region,
                                      std::string region_name,
                                      std::int64_t min_pairs) {
  if (fields.size() != grid.size() * snapshots || region.size() != grid.size()) {
    throw ShapeError("spatial correlation inputs do not match the grid");
  }
  if (snapshots == 0) {
    throw InputError("spatial correlation needs at least one field");
  }
  if (std::count(region.begin(), region.end(), std::uint8_t{1}) == 0) {
    throw InputError("spatial correlation region is empty");
  }
  const int max_k = direction == Direction::longitudinal ? grid.nx : grid.ny;
  std::vector<std::int64_t> pairs(static_cast<std::size_t>(max_k), 0);
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix < grid.nx; ++ix) {
      if (!region[grid.index(ix, iy)]) {
        continue;
      }
      for (int k = 0; k < max_k; ++k) {
        const int x2 = direction == Direction::longitudinal ? ix + k : ix;
        const int y2 = direction == Direction::latitudinal ? iy + k : iy;
        if (x2 < grid.nx && y2 < grid.ny && region[grid.index(x2, y2)]) {
          ++pairs[static_cast<std::size_t>(k)];
        }
      }
    }
  }

  SpatialCorrResult r;
  r.direction = direction;
  r.region = std::move(region_name);
  std::vector<double> sum(static_cast<std::size_t>(max_k), 0.0);
  for (std::size_t t = 0; t < snapshots; ++t) {
    const double* f = fields.data() + t * grid.size();
    double mean = 0.0, n = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (region[k]) {
        mean += f[k];
        n += 1.0;
      }
    }
    mean /= n;
    double var = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (region[k]) {
        var += (f[k] - mean) * (f[k] - mean);
      }
    }
    var /= n;
    if (!(var > 1e-300)) {
      ++r.snapshots_skipped;
      continue;
    }
    ++r.snapshots_used;
    std::vector<double> cov(static_cast<std::size_t>(max_k), 0.0);
    for (int iy = 0; iy < grid.ny; ++iy) {
      for (int ix = 0; ix < grid.nx; ++ix) {
        const std::size_t a = grid.index(ix, iy);
        if (!region[a]) {
          continue;
        }
        const double da = f[a] - mean;
        for (int k = 0; k < max_k; ++k) {
          const int x2 = direction == Direction::longitudinal ? ix + k : ix;
          const int y2 = direction == Direction::latitudinal ? iy + k : iy;
          if (x2 >= grid.nx || y2 >= grid.ny) {
            break;
          }
          const std::size_t b = grid.index(x2, y2);
          if (region[b]) {
            cov[static_cast<std::size_t>(k)] += da * (f[b] - mean);
          }
        }
      }
    }
    for (int k = 0; k < max_k; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (pairs[kk] > 0) {
        sum[kk] += cov[kk] / static_cast<double>(pairs[kk]) / var;
      }
    }
  }
  for (int k = 0; k < max_k; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (pairs[kk] < min_pairs || r.snapshots_used == 0) {
      continue;
    }
    r.r_m.push_back(k * grid.dx);
    r.corr.push_back(sum[kk] / static_cast<double>(r.snapshots_used));
    r.pairs.push_back(pairs[kk]);
  }
  return r;
}

StandardizeParams fit_standardize(std::span<const double> values) {
  if (values.empty()) {
    throw InputError("standardization of an empty set");
  }
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
  }
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0)) {
    throw DegenerateError("standardization of a constant set");
  }
  return {mean, sd};
}

std::vector<double> standardize(std::span<const double> values,
                                const StandardizeParams& p) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return p.apply(v); });
  return out;
}

std::vector<double> unstandardize(std::span<const double> values,
                                  const StandardizeParams& p) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return p.invert(v); });
  return out;
}

namespace {
std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      r[idx[k]] = avg;
    }
    i = j + 1;
  }
  return r;
}
} // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ShapeError("spearman needs two equal-length samples");
  }
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

} // namespace tptkit
