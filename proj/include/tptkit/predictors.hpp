#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tptkit/autodiff.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/gridding.hpp"

namespace tptkit {

inline constexpr std::array<int, 5> kLeadHours{1, 3, 6, 12, 24};

/// Undirected station graph: edge iff planar distance ≤ radius, self-loops
/// included. Neighbour lists are sorted by index.
struct GraphTopology {
  double radius_m = 30000.0;
  ad::Csr csr;

  int nodes() const { return csr.nodes; }
  std::size_t degree(int i) const {
    return static_cast<std::size_t>(csr.offsets[static_cast<std::size_t>(i) + 1] -
                                    csr.offsets[static_cast<std::size_t>(i)]);
  }
  bool connected(int a, int b) const;
};

GraphTopology build_graph(std::span<const Point2> stations, double radius_km = 30.0);

/// θ̃′(t+h) = θ′(t).
std::vector<double> persistence_predict(std::span<const double> state);

/// (1/N) Σ (pred - target)²; ShapeError on length mismatch.
double loss_station(std::span<const double> pred, std::span<const double> target);
/// Mean of squared residuals over inland nodes; ConfigError on an empty mask.
double loss_mesh(std::span<const double> pred, std::span<const double> target,
                 const Mask& inland);

// --- graph attention network ----------------------------------------------------

struct GnnConfig {
  int hidden = 64;
  int heads = 4;
  int layers = 4;
  double slope = 0.2;
  double radius_km = 30.0;
  bool use_rh = false;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GnnConfig from_json(const nlohmann::json& j);
};

/// Linear embedding, `layers` residual multi-head attention layers and a
/// linear readout, plus a learned multiple of the node's own θ′ input
/// (feature column 0).
class GnnModel {
public:
  GnnModel(GnnConfig cfg, int n_features);
  GnnModel(GnnConfig cfg, int n_features, ad::ParamSet params);

  /// `features` is [nodes, n_features]; returns [nodes, 1]. Throws
  /// NumericError naming the layer on a non-finite activation.
  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& params,
                  const ad::Tensor& features, const ad::Csr& graph) const;
  std::vector<double> predict(const ad::Tensor& features, const ad::Csr& graph) const;

  const GnnConfig& config() const { return cfg_; }
  int n_features() const { return n_features_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

private:
  GnnConfig cfg_;
  int n_features_;
  ad::ParamSet params_;
};

/// Static node features (easting, northing, altitude, optional humidity),
/// standardized across stations, prefixed per sample by the θ′ column.
struct StationFeatures {
  int stations = 0;
  int n_static = 0;
  std::vector<double> statics; // [station][n_static]

  int width() const { return 1 + n_static; }
  /// `theta` holds `batch` consecutive station vectors.
  ad::Tensor build(std::span<const double> theta, int batch) const;
};

StationFeatures make_station_features(const std::vector<StationMeta>& stations,
                                      std::span<const double> rh_mean,
                                      bool use_rh);

// --- mesh autoencoder ----------------------------------------------------------

struct CnnConfig {
  int grid = 32;
  int base_channels = 8;
  int max_channels = 32;
  int latent = 128;
  int predictor_width = 128;
  double slope = 0.2;
  std::uint64_t seed = 1;

  /// Number of stride-2 stages; ConfigError unless grid = 4·2^L with L ≥ 1.
  int levels() const;
  int channels(int level) const;
  void validate() const;
  nlohmann::json to_json() const;
  static CnnConfig from_json(const nlohmann::json& j);
};

class CnnModel {
public:
  CnnModel(CnnConfig cfg, Mask enlarged);
  CnnModel(CnnConfig cfg, Mask enlarged, ad::ParamSet params);

  /// `input` is [B,1,n,n]; output is [B,1,n,n], zero outside the enlarged
  /// mask. Training mode normalizes with batch statistics.
  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& params,
                  const ad::Tensor& input, bool training);
  std::vector<double> predict(const ad::Tensor& input);

  const CnnConfig& config() const { return cfg_; }
  const Mask& enlarged() const { return enlarged_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

private:
  ad::Var conv(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var x,
               const std::string& name, int stride) const;
  ad::Var resblock(ad::Tape& tape, const std::vector<ad::Var>& p, ad::Var x,
                   const std::string& name) const;
  ad::Var linear(const std::vector<ad::Var>& p, ad::Var x, const std::string& name) const;
  void init();

  CnnConfig cfg_;
  Mask enlarged_;
  ad::Tensor mask_plane_;
  ad::ParamSet params_;
};

// --- training -------------------------------------------------------------------

struct TrainConfig {
  ad::AdamConfig adam;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int lead_hours = 12;
  /// Samples drawn per epoch from the shuffled training set; 0 = all.
  std::size_t max_samples_per_epoch = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossHistory {
  std::vector<double> train;
  std::vector<double> val;
  nlohmann::json to_json() const;
};

/// A model bound to its training and validation samples.
class TrainProblem {
public:
  virtual ~TrainProblem() = default;
  virtual ad::ParamSet& params() = 0;
  virtual std::size_t count(SplitLabel which) const = 0;
  /// Mean loss over the batch; fills one loss per sample in `per_sample`.
  virtual ad::Var batch_loss(ad::Tape& tape, const std::vector<ad::Var>& params,
                             SplitLabel which, std::span<const std::size_t> ids,
                             bool training, std::span<double> per_sample) = 0;
};

/// Adam over shuffled mini-batches. Epoch losses are per-sample means summed
/// in sample order. Throws TrainingError on a non-finite loss.
LossHistory train(TrainProblem& problem, const TrainConfig& cfg,
                  const std::function<void(int, double, double)>& on_epoch = {});

/// Validation-style loss over a split in eval mode.
double evaluate_loss(TrainProblem& problem, SplitLabel which, int batch_size);

/// Station forecasting samples: θ′ at t (standardized) → θ′ at t+lead.
class StationProblem : public TrainProblem {
public:
  StationProblem(GnnModel& model, const StationFeatures& features,
                 const GraphTopology& graph, std::span<const double> theta,
                 std::size_t steps, int lead_steps,
                 std::span<const SplitLabel> split);

  ad::ParamSet& params() override { return model_.params(); }
  std::size_t count(SplitLabel which) const override;
  ad::Var batch_loss(ad::Tape& tape, const std::vector<ad::Var>& params,
                     SplitLabel which, std::span<const std::size_t> ids,
                     bool training, std::span<double> per_sample) override;
  const std::vector<std::int64_t>& times(SplitLabel which) const;

private:
  const ad::Csr& replicated(int batch);

  GnnModel& model_;
  const StationFeatures& features_;
  const GraphTopology& graph_;
  std::span<const double> theta_;
  int lead_;
  std::array<std::vector<std::int64_t>, 3> times_;
  std::map<int, ad::Csr> cache_;
};

/// Mesh forecasting samples over a masked field sequence.
class MeshProblem : public TrainProblem {
public:
  MeshProblem(CnnModel& model, const Mask& inland, std::span<const double> fields,
              std::size_t steps, int lead_steps, std::span<const SplitLabel> split);

  ad::ParamSet& params() override { return model_.params(); }
  std::size_t count(SplitLabel which) const override;
  ad::Var batch_loss(ad::Tape& tape, const std::vector<ad::Var>& params,
                     SplitLabel which, std::span<const std::size_t> ids,
                     bool training, std::span<double> per_sample) override;

private:
  CnnModel& model_;
  const Mask& inland_;
  std::span<const double> fields_;
  std::size_t px_;
  int lead_;
  std::array<std::vector<std::int64_t>, 3> times_;
};

/// Sample times t with t and t+lead on the grid, grouped by the split of t.
std::array<std::vector<std::int64_t>, 3>
sample_times(std::span<const SplitLabel> split, std::size_t steps, int lead_steps);

/// Applies `step` k times, feeding each prediction back as input.
std::vector<double>
rollout(const std::function<std::vector<double>(const std::vector<double>&)>& step,
        std::vector<double> state, int k);

} // namespace tptkit
