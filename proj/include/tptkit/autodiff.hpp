#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace tptkit::ad {

/// Dense row-major tensor of doubles.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
};

/// Records the forward computation; `backward` replays it in reverse.
class Tape {
public:
  /// Called with the tape and the recorded node's own id.
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  Var record(Tensor value, std::vector<int> parents, Backward backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  /// Gradient buffer, allocated as zeros on first access.
  Tensor& grad(int id);
  const Tensor& grad(Var v) { return grad(v.id); }

  /// Seeds d(out)/d(out) = 1 for a scalar `out` and propagates.
  void backward(Var out);
  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

/// Compressed adjacency; `neighbors[offsets[i]..offsets[i+1])` are the
/// sources aggregated into node i.
struct Csr {
  int nodes = 0;
  std::vector<int> offsets{0};
  std::vector<int> neighbors;

  std::size_t edges() const { return neighbors.size(); }
  /// Block-diagonal copy for a batch of independent graphs.
  Csr replicate(int copies) const;
};

// --- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);                    // [M,K]·[K,N]
Var add(Var a, Var b);                       // same shape
Var add_bias(Var x, Var bias);               // [M,F] + [F]
Var scale(Var x, double s);
Var mul_const(Var x, const Tensor& c);       // elementwise by a constant
Var mul_scalar_param(Var x, Var s);          // x · s for a [1] parameter
Var leaky_relu(Var x, double slope);
Var reshape(Var x, std::vector<int> shape);
Var column(Var x, int j);                    // [M,F] -> [M,1]

/// 2-D convolution, NCHW input, OIHW weight, square kernel.
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var upsample_nearest2x(Var x);

/// Running statistics for batch normalization, updated in training mode.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;
};

/// Per-channel normalization over (batch, spatial) for [B,C,H,W] or over
/// rows for [M,C]. Training mode uses batch statistics and updates `stats`.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats,
               bool training, double eps = 1e-5);

/// x / sqrt(mean over channels of x² + eps), per pixel.
Var pixel_norm(Var x, double eps = 1e-8);

/// Masked multi-head attention over graph neighbourhoods. `wh` is
/// [nodes, heads·F]; `a_src`, `a_dst` are [heads, F]. Scores
/// leaky(a_dst·wh_i + a_src·wh_j) are softmax-normalized over each node's
/// neighbours and used to average the neighbour features per head.
Var graph_attention(Var wh, Var a_src, Var a_dst, const Csr& graph,
                    double slope);

Var mse_loss(Var pred, const Tensor& target);
/// Σ_mask (p - t)² / (batch · |mask|) with a per-pixel mask over [B,1,H,W].
Var masked_mse_loss(Var pred, const Tensor& target, std::span<const std::uint8_t> mask);

// --- parameters and optimizer ---------------------------------------------

/// Ordered named parameter tensors plus non-trainable buffers.
class ParamSet {
public:
  void add(std::string name, Tensor init);
  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Var> bind(Tape& tape) const;

  std::map<std::string, BatchNormStats>& bn_stats() { return bn_; }
  const std::map<std::string, BatchNormStats>& bn_stats() const { return bn_; }

  /// Single binary payload (all tensors then all buffers, float64 LE) and a
  /// JSON manifest listing names and shapes.
  void save(const std::string& stem, const nlohmann::json& extra) const;
  static ParamSet load(const std::string& stem, nlohmann::json* extra);

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, BatchNormStats> bn_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(const ParamSet& params, AdamConfig cfg);
  void step(ParamSet& params, const std::vector<const Tensor*>& grads);

private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

} // namespace tptkit::ad
