#include "tptkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include <Eigen/Dense>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"

namespace tptkit::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmap(const double* p, int rows, int cols) { return CMapMat(p, rows, cols); }
MapMat map(double* p, int rows, int cols) { return MapMat(p, rows, cols); }

void require(bool ok, const std::string& op, const std::string& detail) {
  if (!ok) {
    throw ShapeError(op + ": " + detail);
  }
}

std::string both(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape) + " vs " + shape_string(b.shape);
}

std::size_t uz(int v) { return static_cast<std::size_t>(v); }

// Views a tensor as (outer, channels, inner) for per-channel reductions.
struct ChannelLayout {
  int outer = 0, channels = 0, inner = 0;
};

ChannelLayout channel_layout(const Tensor& x, const std::string& op) {
  if (x.rank() == 2) {
    return {x.dim(0), x.dim(1), 1};
  }
  require(x.rank() == 4, op, "expects [M,C] or [B,C,H,W], got " + shape_string(x.shape));
  return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
}

struct ConvGeom {
  int C, H, W, k, stride, pad, Ho, Wo;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const int hw = g.Ho * g.Wo;
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + uz(((c * g.k + ky) * g.k + kx) * hw);
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + uz(oy * g.Wo);
          if (iy < 0 || iy >= g.H) {
            std::fill(dst, dst + g.Wo, 0.0);
            continue;
          }
          const double* src = x + uz((c * g.H + iy) * g.W);
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const int hw = g.Ho * g.Wo;
  for (int c = 0; c < g.C; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + uz(((c * g.k + ky) * g.k + kx) * hw);
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.H) {
            continue;
          }
          double* dst = dx + uz((c * g.H + iy) * g.W);
          const double* src = row + uz(oy * g.Wo);
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.W) {
              dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

} // namespace

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("tensor data does not match shape " + shape_string(shape));
  }
}

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    n *= uz(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "," : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back({std::move(value), {}, true, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<int> parents, Backward backward) {
  bool any = false;
  for (int p : parents) {
    any = any || requires_grad(p);
  }
  nodes_.push_back({std::move(value), {}, any, any ? std::move(backward) : Backward{}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[uz(id)];
  if (n.grad.data.size() != n.value.data.size()) {
    n.grad = Tensor(n.value.shape, 0.0);
  }
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out.id).size() != 1) {
    throw ShapeError("backward needs a scalar output, got " +
                     shape_string(value(out.id).shape));
  }
  grad(out.id).data[0] = 1.0;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[uz(id)];
    if (n.backward && n.grad.data.size() == n.value.data.size()) {
      n.backward(*this, id);
    }
  }
}

Csr Csr::replicate(int copies) const {
  Csr out;
  out.nodes = nodes * copies;
  out.offsets.reserve(uz(out.nodes) + 1);
  out.neighbors.reserve(neighbors.size() * uz(copies));
  for (int c = 0; c < copies; ++c) {
    const int base = c * nodes;
    for (int i = 0; i < nodes; ++i) {
      for (int k = offsets[uz(i)]; k < offsets[uz(i) + 1]; ++k) {
        out.neighbors.push_back(base + neighbors[uz(k)]);
      }
      out.offsets.push_back(static_cast<int>(out.neighbors.size()));
    }
  }
  return out;
}

// --- elementwise and dense ops ---------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul",
          both(A, B));
  const int M = A.dim(0), K = A.dim(1), N = B.dim(1);
  Tensor C({M, N});
  map(C.data.data(), M, N).noalias() = cmap(A.data.data(), M, K) * cmap(B.data.data(), K, N);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {ia, ib}, [ia, ib, M, K, N](Tape& t, int self) {
    const double* g = t.grad(self).data.data();
    if (t.requires_grad(ia)) {
      map(t.grad(ia).data.data(), M, K).noalias() +=
          cmap(g, M, N) * cmap(t.value(ib).data.data(), K, N).transpose();
    }
    if (t.requires_grad(ib)) {
      map(t.grad(ib).data.data(), K, N).noalias() +=
          cmap(t.value(ia).data.data(), M, K).transpose() * cmap(g, M, N);
    }
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.shape == B.shape, "add", both(A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) {
    C.data[i] += B.data[i];
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (int p : {ia, ib}) {
      if (t.requires_grad(p)) {
        Tensor& d = t.grad(p);
        for (std::size_t i = 0; i < g.size(); ++i) {
          d.data[i] += g.data[i];
        }
      }
    }
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  require(X.rank() == 2 && b.size() == uz(X.dim(1)), "add_bias", both(X, b));
  const int M = X.dim(0), F = X.dim(1);
  Tensor Y = X;
  for (int i = 0; i < M; ++i) {
    for (int f = 0; f < F; ++f) {
      Y.data[uz(i * F + f)] += b.data[uz(f)];
    }
  }
  const int ix = x.id, ib = bias.id;
  return x.tape->record(std::move(Y), {ix, ib}, [ix, ib, M, F](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor& d = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        d.data[i] += g.data[i];
      }
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad(ib);
      for (int i = 0; i < M; ++i) {
        for (int f = 0; f < F; ++f) {
          d.data[uz(f)] += g.data[uz(i * F + f)];
        }
      }
    }
  });
}

Var scale(Var x, double s) {
  Tensor Y = x.value();
  for (double& v : Y.data) {
    v *= s;
  }
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      d.data[i] += s * g.data[i];
    }
  });
}

Var mul_const(Var x, const Tensor& c) {
  const Tensor& X = x.value();
  require(X.size() == c.size(), "mul_const", both(X, c));
  Tensor Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) {
    Y.data[i] *= c.data[i];
  }
  auto factor = std::make_shared<std::vector<double>>(c.data);
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, factor](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      d.data[i] += (*factor)[i] * g.data[i];
    }
  });
}

Var mul_scalar_param(Var x, Var s) {
  require(s.value().size() == 1, "mul_scalar_param",
          "scalar expected, got " + shape_string(s.value().shape));
  const double sv = s.value().data[0];
  Tensor Y = x.value();
  for (double& v : Y.data) {
    v *= sv;
  }
  const int ix = x.id, is = s.id;
  return x.tape->record(std::move(Y), {ix, is}, [ix, is](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(ix);
    if (t.requires_grad(ix)) {
      const double sv = t.value(is).data[0];
      Tensor& d = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        d.data[i] += sv * g.data[i];
      }
    }
    if (t.requires_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        acc += g.data[i] * X.data[i];
      }
      t.grad(is).data[0] += acc;
    }
  });
}

Var leaky_relu(Var x, double slope) {
  Tensor Y = x.value();
  for (double& v : Y.data) {
    v = v > 0.0 ? v : slope * v;
  }
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, slope](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& X = t.value(ix);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      d.data[i] += X.data[i] > 0.0 ? g.data[i] : slope * g.data[i];
    }
  });
}

Var reshape(Var x, std::vector<int> shape) {
  require(shape_size(shape) == x.value().size(), "reshape",
          shape_string(x.value().shape) + " -> " + shape_string(shape));
  Tensor Y(std::move(shape), x.value().data);
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      d.data[i] += g.data[i];
    }
  });
}

Var column(Var x, int j) {
  const Tensor& X = x.value();
  require(X.rank() == 2 && j >= 0 && j < X.dim(1), "column",
          shape_string(X.shape) + " col " + std::to_string(j));
  const int M = X.dim(0), F = X.dim(1);
  Tensor Y({M, 1});
  for (int i = 0; i < M; ++i) {
    Y.data[uz(i)] = X.data[uz(i * F + j)];
  }
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, M, F, j](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (int i = 0; i < M; ++i) {
      d.data[uz(i * F + j)] += g.data[uz(i)];
    }
  });
}

// --- convolution ------------------------------------------------------------

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  const Tensor& Bs = b.value();
  require(X.rank() == 4 && Wt.rank() == 4 && Wt.dim(1) == X.dim(1) &&
              Wt.dim(2) == Wt.dim(3) && Bs.size() == uz(Wt.dim(0)),
          "conv2d", both(X, Wt));
  require(stride >= 1 && pad >= 0, "conv2d", "bad stride/pad");
  const int B = X.dim(0), O = Wt.dim(0);
  ConvGeom g{X.dim(1), X.dim(2), X.dim(3), Wt.dim(2), stride, pad, 0, 0};
  g.Ho = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.k) / stride + 1;
  require(g.Ho > 0 && g.Wo > 0, "conv2d", "kernel larger than padded input");
  const int ckk = g.C * g.k * g.k, hw = g.Ho * g.Wo;
  const std::size_t in_sz = uz(g.C * g.H * g.W);

  Tensor Y({B, O, g.Ho, g.Wo});
  std::vector<double> cols(uz(ckk) * uz(hw));
  for (int n = 0; n < B; ++n) {
    im2col(X.data.data() + uz(n) * in_sz, g, cols.data());
    auto out = map(Y.data.data() + uz(n) * uz(O * hw), O, hw);
    out.noalias() = cmap(Wt.data.data(), O, ckk) * cmap(cols.data(), ckk, hw);
    for (int o = 0; o < O; ++o) {
      out.row(o).array() += Bs.data[uz(o)];
    }
  }
  const int ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(
      std::move(Y), {ix, iw, ib},
      [ix, iw, ib, g, B, O, ckk, hw, in_sz](Tape& t, int self) {
        const Tensor& G = t.grad(self);
        const Tensor& X = t.value(ix);
        const Tensor& Wt = t.value(iw);
        const bool need_x = t.requires_grad(ix);
        const bool need_w = t.requires_grad(iw);
        std::vector<double> cols(uz(ckk) * uz(hw));
        std::vector<double> dcols(need_x ? uz(ckk) * uz(hw) : 0);
        for (int n = 0; n < B; ++n) {
          auto gout = cmap(G.data.data() + uz(n) * uz(O * hw), O, hw);
          if (t.requires_grad(ib)) {
            Tensor& db = t.grad(ib);
            for (int o = 0; o < O; ++o) {
              db.data[uz(o)] += gout.row(o).sum();
            }
          }
          if (need_w) {
            im2col(X.data.data() + uz(n) * in_sz, g, cols.data());
            map(t.grad(iw).data.data(), O, ckk).noalias() +=
                gout * cmap(cols.data(), ckk, hw).transpose();
          }
          if (need_x) {
            map(dcols.data(), ckk, hw).noalias() =
                cmap(Wt.data.data(), O, ckk).transpose() * gout;
            col2im_add(dcols.data(), g, t.grad(ix).data.data() + uz(n) * in_sz);
          }
        }
      });
}

Var upsample_nearest2x(Var x) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "upsample_nearest2x", shape_string(X.shape));
  const int B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  Tensor Y({B, C, 2 * H, 2 * W});
  const std::size_t planes = uz(B * C);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = X.data.data() + p * uz(H * W);
    double* dst = Y.data.data() + p * uz(4 * H * W);
    for (int y = 0; y < 2 * H; ++y) {
      for (int xx = 0; xx < 2 * W; ++xx) {
        dst[uz(y * 2 * W + xx)] = src[uz((y / 2) * W + xx / 2)];
      }
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, planes, H, W](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* src = G.data.data() + p * uz(4 * H * W);
      double* dst = d.data.data() + p * uz(H * W);
      for (int y = 0; y < 2 * H; ++y) {
        for (int xx = 0; xx < 2 * W; ++xx) {
          dst[uz((y / 2) * W + xx / 2)] += src[uz(y * 2 * W + xx)];
        }
      }
    }
  });
}

// --- normalization ------------------------------------------------------------

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training,
               double eps) {
  const Tensor& X = x.value();
  const ChannelLayout L = channel_layout(X, "batch_norm");
  const int C = L.channels;
  require(gamma.value().size() == uz(C) && beta.value().size() == uz(C),
          "batch_norm", "affine parameters must have one entry per channel");
  if (stats.mean.empty()) {
    stats.mean.assign(uz(C), 0.0);
    stats.var.assign(uz(C), 1.0);
  }
  require(stats.mean.size() == uz(C), "batch_norm", "running stats size mismatch");
  const double m = static_cast<double>(L.outer) * L.inner;
  auto at = [L](int o, int c, int p) { return (uz(o) * uz(L.channels) + uz(c)) * uz(L.inner) + uz(p); };

  std::vector<double> mean(uz(C)), inv_std(uz(C));
  for (int c = 0; c < C; ++c) {
    if (training) {
      double s = 0.0;
      for (int o = 0; o < L.outer; ++o) {
        for (int p = 0; p < L.inner; ++p) {
          s += X.data[at(o, c, p)];
        }
      }
      const double mu = s / m;
      double v = 0.0;
      for (int o = 0; o < L.outer; ++o) {
        for (int p = 0; p < L.inner; ++p) {
          const double d = X.data[at(o, c, p)] - mu;
          v += d * d;
        }
      }
      v /= m;
      mean[uz(c)] = mu;
      inv_std[uz(c)] = 1.0 / std::sqrt(v + eps);
      const double unbiased = m > 1.0 ? v * m / (m - 1.0) : v;
      stats.mean[uz(c)] = (1.0 - stats.momentum) * stats.mean[uz(c)] + stats.momentum * mu;
      stats.var[uz(c)] = (1.0 - stats.momentum) * stats.var[uz(c)] + stats.momentum * unbiased;
    } else {
      mean[uz(c)] = stats.mean[uz(c)];
      inv_std[uz(c)] = 1.0 / std::sqrt(stats.var[uz(c)] + eps);
    }
  }

  const Tensor& Gm = gamma.value();
  const Tensor& Bt = beta.value();
  Tensor Y(X.shape);
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  for (int o = 0; o < L.outer; ++o) {
    for (int c = 0; c < C; ++c) {
      for (int p = 0; p < L.inner; ++p) {
        const std::size_t k = at(o, c, p);
        const double h = (X.data[k] - mean[uz(c)]) * inv_std[uz(c)];
        (*xhat)[k] = h;
        Y.data[k] = Gm.data[uz(c)] * h + Bt.data[uz(c)];
      }
    }
  }
  const int ix = x.id, ig = gamma.id, ibt = beta.id;
  return x.tape->record(
      std::move(Y), {ix, ig, ibt},
      [ix, ig, ibt, L, m, training, xhat, inv_std, at](Tape& t, int self) {
        const Tensor& G = t.grad(self);
        const Tensor& Gm = t.value(ig);
        const int C = L.channels;
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int o = 0; o < L.outer; ++o) {
            for (int p = 0; p < L.inner; ++p) {
              const std::size_t k = at(o, c, p);
              sum_g += G.data[k];
              sum_gx += G.data[k] * (*xhat)[k];
            }
          }
          if (t.requires_grad(ig)) {
            t.grad(ig).data[uz(c)] += sum_gx;
          }
          if (t.requires_grad(ibt)) {
            t.grad(ibt).data[uz(c)] += sum_g;
          }
          if (!t.requires_grad(ix)) {
            continue;
          }
          Tensor& dx = t.grad(ix);
          const double gi = Gm.data[uz(c)] * inv_std[uz(c)];
          for (int o = 0; o < L.outer; ++o) {
            for (int p = 0; p < L.inner; ++p) {
              const std::size_t k = at(o, c, p);
              if (training) {
                dx.data[k] += gi * (G.data[k] - sum_g / m - (*xhat)[k] * sum_gx / m);
              } else {
                dx.data[k] += gi * G.data[k];
              }
            }
          }
        }
      });
}

Var pixel_norm(Var x, double eps) {
  const Tensor& X = x.value();
  const ChannelLayout L = channel_layout(X, "pixel_norm");
  auto at = [L](int o, int c, int p) { return (uz(o) * uz(L.channels) + uz(c)) * uz(L.inner) + uz(p); };
  auto r = std::make_shared<std::vector<double>>(uz(L.outer) * uz(L.inner));
  Tensor Y(X.shape);
  for (int o = 0; o < L.outer; ++o) {
    for (int p = 0; p < L.inner; ++p) {
      double s = 0.0;
      for (int c = 0; c < L.channels; ++c) {
        const double v = X.data[at(o, c, p)];
        s += v * v;
      }
      const double rr = 1.0 / std::sqrt(s / L.channels + eps);
      (*r)[uz(o) * uz(L.inner) + uz(p)] = rr;
      for (int c = 0; c < L.channels; ++c) {
        Y.data[at(o, c, p)] = X.data[at(o, c, p)] * rr;
      }
    }
  }
  const int ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix, L, r, at](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(ix);
    Tensor& d = t.grad(ix);
    for (int o = 0; o < L.outer; ++o) {
      for (int p = 0; p < L.inner; ++p) {
        const double rr = (*r)[uz(o) * uz(L.inner) + uz(p)];
        double dot = 0.0;
        for (int c = 0; c < L.channels; ++c) {
          dot += G.data[at(o, c, p)] * X.data[at(o, c, p)];
        }
        const double k = rr * rr * rr * dot / L.channels;
        for (int c = 0; c < L.channels; ++c) {
          const std::size_t i = at(o, c, p);
          d.data[i] += rr * G.data[i] - X.data[i] * k;
        }
      }
    }
  });
}

// --- graph attention ------------------------------------------------------------

Var graph_attention(Var wh, Var a_src, Var a_dst, const Csr& graph, double slope) {
  const Tensor& Wh = wh.value();
  const Tensor& As = a_src.value();
  const Tensor& Ad = a_dst.value();
  require(As.rank() == 2 && Ad.shape == As.shape, "graph_attention", both(As, Ad));
  const int heads = As.dim(0), F = As.dim(1), HF = heads * F;
  require(Wh.rank() == 2 && Wh.dim(1) == HF && Wh.dim(0) == graph.nodes,
          "graph_attention",
          shape_string(Wh.shape) + " for " + std::to_string(graph.nodes) + " nodes");
  const int N = graph.nodes;
  auto g = std::make_shared<Csr>(graph);
  std::vector<double> s_src(uz(N * heads)), s_dst(uz(N * heads));
  for (int i = 0; i < N; ++i) {
    for (int h = 0; h < heads; ++h) {
      double a = 0.0, b = 0.0;
      for (int f = 0; f < F; ++f) {
        const double v = Wh.data[uz(i * HF + h * F + f)];
        a += As.data[uz(h * F + f)] * v;
        b += Ad.data[uz(h * F + f)] * v;
      }
      s_src[uz(i * heads + h)] = a;
      s_dst[uz(i * heads + h)] = b;
    }
  }
  const std::size_t E = g->edges();
  // alpha and pre-activation score per (edge, head)
  auto alpha = std::make_shared<std::vector<double>>(E * uz(heads));
  auto zpos = std::make_shared<std::vector<std::uint8_t>>(E * uz(heads));
  Tensor Y({N, HF});
  for (int i = 0; i < N; ++i) {
    const int e0 = g->offsets[uz(i)], e1 = g->offsets[uz(i) + 1];
    for (int h = 0; h < heads; ++h) {
      double mx = -INFINITY;
      for (int e = e0; e < e1; ++e) {
        const int j = g->neighbors[uz(e)];
        const double z = s_dst[uz(i * heads + h)] + s_src[uz(j * heads + h)];
        const double v = z > 0.0 ? z : slope * z;
        (*zpos)[uz(e) * uz(heads) + uz(h)] = z > 0.0;
        (*alpha)[uz(e) * uz(heads) + uz(h)] = v;
        mx = std::max(mx, v);
      }
      double den = 0.0;
      for (int e = e0; e < e1; ++e) {
        double& a = (*alpha)[uz(e) * uz(heads) + uz(h)];
        a = std::exp(a - mx);
        den += a;
      }
      double* out = Y.data.data() + uz(i * HF + h * F);
      for (int e = e0; e < e1; ++e) {
        double& a = (*alpha)[uz(e) * uz(heads) + uz(h)];
        a /= den;
        const double* src = Wh.data.data() + uz(g->neighbors[uz(e)] * HF + h * F);
        for (int f = 0; f < F; ++f) {
          out[f] += a * src[f];
        }
      }
    }
  }
  const int iw = wh.id, is = a_src.id, id = a_dst.id;
  return wh.tape->record(
      std::move(Y), {iw, is, id},
      [iw, is, id, g, alpha, zpos, heads, F, HF, N, slope](Tape& t, int self) {
        const Tensor& G = t.grad(self);
        const Tensor& Wh = t.value(iw);
        const Tensor& As = t.value(is);
        const Tensor& Ad = t.value(id);
        std::vector<double> dwh(uz(N * HF), 0.0);
        std::vector<double> ds_src(uz(N * heads), 0.0), ds_dst(uz(N * heads), 0.0);
        std::vector<double> dalpha;
        for (int i = 0; i < N; ++i) {
          const int e0 = g->offsets[uz(i)], e1 = g->offsets[uz(i) + 1];
          dalpha.assign(uz(e1 - e0), 0.0);
          for (int h = 0; h < heads; ++h) {
            const double* gi = G.data.data() + uz(i * HF + h * F);
            double weighted = 0.0;
            for (int e = e0; e < e1; ++e) {
              const int j = g->neighbors[uz(e)];
              const double a = (*alpha)[uz(e) * uz(heads) + uz(h)];
              const double* src = Wh.data.data() + uz(j * HF + h * F);
              double* dsrc = dwh.data() + uz(j * HF + h * F);
              double da = 0.0;
              for (int f = 0; f < F; ++f) {
                da += gi[f] * src[f];
                dsrc[f] += a * gi[f];
              }
              dalpha[uz(e - e0)] = da;
              weighted += a * da;
            }
            for (int e = e0; e < e1; ++e) {
              const int j = g->neighbors[uz(e)];
              const std::size_t k = uz(e) * uz(heads) + uz(h);
              const double de = (*alpha)[k] * (dalpha[uz(e - e0)] - weighted);
              const double dz = (*zpos)[k] ? de : slope * de;
              ds_dst[uz(i * heads + h)] += dz;
              ds_src[uz(j * heads + h)] += dz;
            }
          }
        }
        const bool need_s = t.requires_grad(is), need_d = t.requires_grad(id);
        for (int j = 0; j < N; ++j) {
          for (int h = 0; h < heads; ++h) {
            const double gs = ds_src[uz(j * heads + h)];
            const double gd = ds_dst[uz(j * heads + h)];
            for (int f = 0; f < F; ++f) {
              const std::size_t k = uz(j * HF + h * F + f);
              const double v = Wh.data[k];
              dwh[k] += gs * As.data[uz(h * F + f)] + gd * Ad.data[uz(h * F + f)];
              if (need_s) {
                t.grad(is).data[uz(h * F + f)] += gs * v;
              }
              if (need_d) {
                t.grad(id).data[uz(h * F + f)] += gd * v;
              }
            }
          }
        }
        if (t.requires_grad(iw)) {
          Tensor& d = t.grad(iw);
          for (std::size_t k = 0; k < dwh.size(); ++k) {
            d.data[k] += dwh[k];
          }
        }
      });
}

// --- losses -----------------------------------------------------------------------

Var mse_loss(Var pred, const Tensor& target) {
  const Tensor& P = pred.value();
  require(P.size() == target.size(), "mse_loss", both(P, target));
  require(P.size() > 0, "mse_loss", "empty input");
  auto diff = std::make_shared<std::vector<double>>(P.size());
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double d = P.data[i] - target.data[i];
    (*diff)[i] = d;
    s += d * d;
  }
  const double n = static_cast<double>(P.size());
  const int ip = pred.id;
  return pred.tape->record(Tensor({1}, {s / n}), {ip}, [ip, diff, n](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    Tensor& d = t.grad(ip);
    for (std::size_t i = 0; i < diff->size(); ++i) {
      d.data[i] += g * 2.0 * (*diff)[i] / n;
    }
  });
}

Var masked_mse_loss(Var pred, const Tensor& target, std::span<const std::uint8_t> mask) {
  const Tensor& P = pred.value();
  require(P.size() == target.size(), "masked_mse_loss", both(P, target));
  require(!mask.empty() && P.size() % mask.size() == 0, "masked_mse_loss",
          "mask size does not divide prediction size");
  const std::size_t px = mask.size();
  const std::size_t batch = P.size() / px;
  const auto n_mask = static_cast<std::size_t>(std::count_if(
      mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  require(n_mask > 0, "masked_mse_loss", "empty mask");
  const double n = static_cast<double>(batch * n_mask);
  auto diff = std::make_shared<std::vector<double>>(P.size(), 0.0);
  double s = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < px; ++p) {
      if (mask[p]) {
        const std::size_t i = b * px + p;
        const double d = P.data[i] - target.data[i];
        (*diff)[i] = d;
        s += d * d;
      }
    }
  }
  const int ip = pred.id;
  return pred.tape->record(Tensor({1}, {s / n}), {ip}, [ip, diff, n](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    Tensor& d = t.grad(ip);
    for (std::size_t i = 0; i < diff->size(); ++i) {
      d.data[i] += g * 2.0 * (*diff)[i] / n;
    }
  });
}

// --- parameters -------------------------------------------------------------------

void ParamSet::add(std::string name, Tensor init) {
  for (const auto& n : names_) {
    if (n == name) {
      throw ConfigError("duplicate parameter name: " + name);
    }
  }
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) {
    n += v.size();
  }
  return n;
}

std::size_t ParamSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) {
      return i;
    }
  }
  throw LookupError("no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<Var> ParamSet::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) {
    out.push_back(tape.parameter(v));
  }
  return out;
}

void ParamSet::save(const std::string& stem, const nlohmann::json& extra) const {
  nlohmann::json j;
  j["format"] = "tptkit-params";
  j["version"] = 1;
  j["extra"] = extra;
  j["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    j["tensors"].push_back({{"name", names_[i]}, {"shape", values_[i].shape}});
  }
  j["batch_norm"] = nlohmann::json::array();
  for (const auto& [name, st] : bn_) {
    j["batch_norm"].push_back(
        {{"name", name}, {"channels", st.mean.size()}, {"momentum", st.momentum}});
  }
  io::write_atomic(
      stem + ".bin",
      [&](std::ostream& out) {
        for (const auto& v : values_) {
          io::write_doubles_le(out, v.data.data(), v.size());
        }
        for (const auto& [name, st] : bn_) {
          io::write_doubles_le(out, st.mean.data(), st.mean.size());
          io::write_doubles_le(out, st.var.data(), st.var.size());
        }
      },
      true);
  io::write_json(stem + ".json", j);
}

ParamSet ParamSet::load(const std::string& stem, nlohmann::json* extra) {
  const nlohmann::json j = io::read_json(stem + ".json");
  if (j.value("format", "") != "tptkit-params") {
    throw InputError(stem + ".json is not a parameter manifest");
  }
  std::ifstream in(stem + ".bin", std::ios::binary);
  if (!in) {
    throw MissingArtifactError("cannot open " + stem + ".bin");
  }
  ParamSet p;
  for (const auto& t : j.at("tensors")) {
    Tensor v(t.at("shape").get<std::vector<int>>());
    io::read_doubles_le(in, v.data.data(), v.size());
    p.add(t.at("name").get<std::string>(), std::move(v));
  }
  for (const auto& b : j.at("batch_norm")) {
    BatchNormStats st;
    const auto c = b.at("channels").get<std::size_t>();
    st.momentum = b.at("momentum").get<double>();
    st.mean.resize(c);
    st.var.resize(c);
    io::read_doubles_le(in, st.mean.data(), c);
    io::read_doubles_le(in, st.var.data(), c);
    p.bn_[b.at("name").get<std::string>()] = std::move(st);
  }
  if (extra != nullptr) {
    *extra = j.at("extra");
  }
  return p;
}

Adam::Adam(const ParamSet& params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.eps > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].size(), 0.0);
    v_.emplace_back(params[i].size(), 0.0);
  }
}

void Adam::step(ParamSet& params, const std::vector<const Tensor*>& grads) {
  if (grads.size() != params.size()) {
    throw ShapeError("Adam::step: gradient count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) {
      continue;
    }
    Tensor& p = params[i];
    const Tensor& g = *grads[i];
    if (g.size() != p.size()) {
      throw ShapeError("Adam::step: gradient shape mismatch for " + params.name(i));
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g.data[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g.data[k] * g.data[k];
      p.data[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

} // namespace tptkit::ad
