#include "tptkit/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tptkit/error.hpp"
#include "tptkit/rng.hpp"
#include "tptkit/stats.hpp"

namespace tptkit {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::size_t uz(int v) { return static_cast<std::size_t>(v); }

Tensor glorot(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) {
    v = rng.uniform(-a, a);
  }
  return t;
}

void check_finite(const Var& v, const std::string& where) {
  for (double x : v.value().data) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite activation in " + where);
    }
  }
}

} // namespace

bool GraphTopology::connected(int a, int b) const {
  const auto begin = csr.neighbors.begin() + csr.offsets[uz(a)];
  const auto end = csr.neighbors.begin() + csr.offsets[uz(a) + 1];
  return std::binary_search(begin, end, b);
}

GraphTopology build_graph(std::span<const Point2> stations, double radius_km) {
  if (!(radius_km >= 0.0)) {
    throw ConfigError("graph radius must be non-negative");
  }
  GraphTopology g;
  g.radius_m = radius_km * 1000.0;
  g.csr.nodes = static_cast<int>(stations.size());
  for (std::size_t i = 0; i < stations.size(); ++i) {
    for (std::size_t j = 0; j < stations.size(); ++j) {
      if (i == j || distance(stations[i], stations[j]) <= g.radius_m) {
        g.csr.neighbors.push_back(static_cast<int>(j));
      }
    }
    g.csr.offsets.push_back(static_cast<int>(g.csr.neighbors.size()));
  }
  return g;
}

std::vector<double> persistence_predict(std::span<const double> state) {
  return {state.begin(), state.end()};
}

double loss_station(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("loss_station: pred has " + std::to_string(pred.size()) +
                     " stations, target " + std::to_string(target.size()));
  }
  if (pred.empty()) {
    throw ShapeError("loss_station: empty input");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double loss_mesh(std::span<const double> pred, std::span<const double> target,
                 const Mask& inland) {
  if (pred.size() != target.size() || pred.size() != inland.size()) {
    throw ShapeError("loss_mesh: pred, target and mask sizes differ");
  }
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (inland[i]) {
      const double d = pred[i] - target[i];
      s += d * d;
      ++n;
    }
  }
  if (n == 0) {
    throw ConfigError("loss_mesh: empty inland mask");
  }
  return s / static_cast<double>(n);
}

// --- GNN --------------------------------------------------------------------------

void GnnConfig::validate() const {
  if (hidden < 1 || heads < 1 || layers < 0 || hidden % heads != 0) {
    throw ConfigError("gnn: hidden must be a positive multiple of heads");
  }
  if (!(slope >= 0.0) || !(radius_km >= 0.0)) {
    throw ConfigError("gnn: slope and radius must be non-negative");
  }
}

nlohmann::json GnnConfig::to_json() const {
  return {{"hidden", hidden}, {"heads", heads},         {"layers", layers},
          {"slope", slope},   {"radius_km", radius_km}, {"use_rh", use_rh},
          {"seed", seed}};
}

GnnConfig GnnConfig::from_json(const nlohmann::json& j) {
  GnnConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.slope = j.value("slope", c.slope);
  c.radius_km = j.value("radius_km", c.radius_km);
  c.use_rh = j.value("use_rh", c.use_rh);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

GnnModel::GnnModel(GnnConfig cfg, int n_features)
    : cfg_(cfg), n_features_(n_features) {
  cfg_.validate();
  if (n_features < 1) {
    throw ConfigError("gnn: need at least one node feature");
  }
  Rng rng(cfg_.seed);
  const int H = cfg_.hidden, hd = H / cfg_.heads;
  params_.add("embed.w", glorot(rng, {n_features, H}, n_features, H));
  params_.add("embed.b", Tensor({H}));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "gat" + std::to_string(l);
    params_.add(p + ".w", glorot(rng, {H, H}, H, H));
    params_.add(p + ".a_src", glorot(rng, {cfg_.heads, hd}, hd, 1));
    params_.add(p + ".a_dst", glorot(rng, {cfg_.heads, hd}, hd, 1));
    params_.add(p + ".b", Tensor({H}));
  }
  params_.add("readout.w", glorot(rng, {H, 1}, H, 1));
  params_.add("readout.b", Tensor({1}));
  params_.add("skip", Tensor({1}, 1.0));
}

GnnModel::GnnModel(GnnConfig cfg, int n_features, ad::ParamSet params)
    : GnnModel(cfg, n_features) {
  if (params.size() != params_.size()) {
    throw ConfigError("gnn: parameter file does not match the configuration");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.name(i) != params_.name(i) || params[i].shape != params_[i].shape) {
      throw ConfigError("gnn: parameter " + params.name(i) + " does not match");
    }
  }
  params_ = std::move(params);
}

Var GnnModel::forward(Tape& tape, const std::vector<Var>& p, const Tensor& features,
                      const ad::Csr& graph) const {
  if (features.rank() != 2 || features.dim(1) != n_features_ ||
      features.dim(0) != graph.nodes) {
    throw ShapeError("gnn_forward: features " + ad::shape_string(features.shape) +
                     " for " + std::to_string(graph.nodes) + " nodes and " +
                     std::to_string(n_features_) + " features");
  }
  auto P = [&](const std::string& name) { return p[params_.index(name)]; };
  Var x = tape.constant(features);
  Var h = ad::leaky_relu(ad::add_bias(ad::matmul(x, P("embed.w")), P("embed.b")),
                         cfg_.slope);
  check_finite(h, "gnn layer 0 (embedding)");
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string n = "gat" + std::to_string(l);
    Var wh = ad::matmul(h, P(n + ".w"));
    Var att = ad::graph_attention(wh, P(n + ".a_src"), P(n + ".a_dst"), graph, cfg_.slope);
    h = ad::add(h, ad::leaky_relu(ad::add_bias(att, P(n + ".b")), cfg_.slope));
    check_finite(h, "gnn layer " + std::to_string(l + 1));
  }
  Var out = ad::add_bias(ad::matmul(h, P("readout.w")), P("readout.b"));
  out = ad::add(out, ad::mul_scalar_param(ad::column(x, 0), P("skip")));
  check_finite(out, "gnn layer " + std::to_string(cfg_.layers + 1) + " (readout)");
  return out;
}

std::vector<double> GnnModel::predict(const Tensor& features, const ad::Csr& graph) const {
  Tape tape;
  Var out = forward(tape, params_.bind(tape), features, graph);
  return out.value().data;
}

Tensor StationFeatures::build(std::span<const double> theta, int batch) const {
  if (theta.size() != uz(batch) * uz(stations)) {
    throw ShapeError("station features: expected " + std::to_string(batch) + "x" +
                     std::to_string(stations) + " values");
  }
  const int F = width();
  Tensor t({batch * stations, F});
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < stations; ++s) {
      double* row = t.data.data() + uz((b * stations + s) * F);
      row[0] = theta[uz(b * stations + s)];
      std::copy_n(statics.data() + uz(s * n_static), n_static, row + 1);
    }
  }
  return t;
}

StationFeatures make_station_features(const std::vector<StationMeta>& stations,
                                      std::span<const double> rh_mean, bool use_rh) {
  StationFeatures f;
  f.stations = static_cast<int>(stations.size());
  std::vector<std::vector<double>> cols(3);
  for (const auto& s : stations) {
    cols[0].push_back(s.easting);
    cols[1].push_back(s.northing);
    cols[2].push_back(s.altitude);
  }
  if (use_rh) {
    if (rh_mean.size() != stations.size()) {
      throw ShapeError("station features: humidity vector length mismatch");
    }
    std::vector<double> rh(rh_mean.begin(), rh_mean.end());
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : rh) {
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
    if (n == 0) {
      throw ConfigError("station features: use_rh set but no humidity present");
    }
    for (double& v : rh) {
      if (!std::isfinite(v)) {
        v = sum / static_cast<double>(n);
      }
    }
    cols.push_back(std::move(rh));
  }
  f.n_static = static_cast<int>(cols.size());
  f.statics.assign(stations.size() * cols.size(), 0.0);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    StandardizeParams sp;
    try {
      sp = fit_standardize(cols[c]);
    } catch (const DegenerateError&) {
      sp = {cols[c].empty() ? 0.0 : cols[c][0], 1.0};
    }
    for (std::size_t s = 0; s < stations.size(); ++s) {
      f.statics[s * cols.size() + c] = sp.apply(cols[c][s]);
    }
  }
  return f;
}

// --- CNN ---------------------------------------------------------------------------

int CnnConfig::levels() const {
  int n = grid, L = 0;
  while (n > 4 && n % 2 == 0) {
    n /= 2;
    ++L;
  }
  if (n != 4 || L < 1) {
    throw ConfigError("cnn: grid size " + std::to_string(grid) +
                      " is not 4*2^L (L >= 1) as the encoder strides require");
  }
  return L;
}

int CnnConfig::channels(int level) const {
  return std::min(base_channels << level, max_channels);
}

void CnnConfig::validate() const {
  levels();
  if (base_channels < 1 || max_channels < base_channels || latent < 1 ||
      predictor_width < 1 || !(slope >= 0.0)) {
    throw ConfigError("cnn: invalid channel or width settings");
  }
}

nlohmann::json CnnConfig::to_json() const {
  return {{"grid", grid},
          {"base_channels", base_channels},
          {"max_channels", max_channels},
          {"latent", latent},
          {"predictor_width", predictor_width},
          {"slope", slope},
          {"seed", seed}};
}

CnnConfig CnnConfig::from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.grid = j.value("grid", c.grid);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.latent = j.value("latent", c.latent);
  c.predictor_width = j.value("predictor_width", c.predictor_width);
  c.slope = j.value("slope", c.slope);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

CnnModel::CnnModel(CnnConfig cfg, Mask enlarged)
    : cfg_(cfg), enlarged_(std::move(enlarged)) {
  cfg_.validate();
  if (enlarged_.size() != uz(cfg_.grid) * uz(cfg_.grid)) {
    throw ConfigError("cnn: mask size does not match the grid");
  }
  mask_plane_ = Tensor({1, 1, cfg_.grid, cfg_.grid});
  for (std::size_t i = 0; i < enlarged_.size(); ++i) {
    mask_plane_.data[i] = enlarged_[i] ? 1.0 : 0.0;
  }
  init();
}

CnnModel::CnnModel(CnnConfig cfg, Mask enlarged, ad::ParamSet params)
    : CnnModel(cfg, std::move(enlarged)) {
  if (params.size() != params_.size()) {
    throw ConfigError("cnn: parameter file does not match the configuration");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.name(i) != params_.name(i) || params[i].shape != params_[i].shape) {
      throw ConfigError("cnn: parameter " + params.name(i) + " does not match");
    }
  }
  params_ = std::move(params);
}

void CnnModel::init() {
  Rng rng(cfg_.seed);
  auto conv = [&](const std::string& name, int cin, int cout, int k, bool bias = true) {
    params_.add(name + ".w", glorot(rng, {cout, cin, k, k}, cin * k * k, cout * k * k));
    if (bias) {
      params_.add(name + ".b", Tensor({cout}));
    }
  };
  auto bn = [&](const std::string& name, int c) {
    params_.add(name + ".gamma", Tensor({c}, 1.0));
    params_.add(name + ".beta", Tensor({c}));
    params_.bn_stats()[name] = {std::vector<double>(uz(c), 0.0),
                                std::vector<double>(uz(c), 1.0), 0.1};
  };
  auto linear = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w", glorot(rng, {in, out}, in, out));
    params_.add(name + ".b", Tensor({out}));
  };
  const int L = cfg_.levels();
  const int flat = cfg_.channels(L) * 16;
  conv("enc.in", 1, cfg_.channels(0), 3);
  for (int l = 0; l < L; ++l) {
    const std::string n = "enc" + std::to_string(l);
    conv(n + ".res.a", cfg_.channels(l), cfg_.channels(l), 3);
    conv(n + ".res.b", cfg_.channels(l), cfg_.channels(l), 3);
    conv(n + ".down", cfg_.channels(l), cfg_.channels(l + 1), 3);
  }
  linear("enc.fc", flat, cfg_.latent);
  linear("pred.fc1", cfg_.latent, cfg_.predictor_width);
  linear("pred.fc2", cfg_.predictor_width, cfg_.latent);
  linear("dec.fc", cfg_.latent, flat);
  for (int l = L - 1; l >= 0; --l) {
    const std::string n = "dec" + std::to_string(l);
    conv(n + ".up", cfg_.channels(l + 1), cfg_.channels(l), 3, false);
    bn(n + ".bn", cfg_.channels(l));
    conv(n + ".res.a", cfg_.channels(l), cfg_.channels(l), 3);
    conv(n + ".res.b", cfg_.channels(l), cfg_.channels(l), 3);
  }
  conv("dec.out", cfg_.channels(0), 1, 3);
}

Var CnnModel::conv(Tape& tape, const std::vector<Var>& p, Var x, const std::string& name,
                   int stride) const {
  Var w = p[params_.index(name + ".w")];
  Var b = params_.contains(name + ".b")
              ? p[params_.index(name + ".b")]
              : tape.constant(Tensor({w.value().dim(0)}));
  return ad::conv2d(x, w, b, stride, w.value().dim(2) / 2);
}

Var CnnModel::resblock(Tape& tape, const std::vector<Var>& p, Var x,
                       const std::string& name) const {
  Var y = ad::leaky_relu(conv(tape, p, x, name + ".a", 1), cfg_.slope);
  return ad::add(x, conv(tape, p, y, name + ".b", 1));
}

Var CnnModel::linear(const std::vector<Var>& p, Var x, const std::string& name) const {
  return ad::add_bias(ad::matmul(x, p[params_.index(name + ".w")]),
                      p[params_.index(name + ".b")]);
}

Var CnnModel::forward(Tape& tape, const std::vector<Var>& p, const Tensor& input,
                      bool training) {
  const int n = cfg_.grid;
  if (input.rank() != 4 || input.dim(1) != 1 || input.dim(2) != n || input.dim(3) != n) {
    throw ShapeError("cnn_forward: input " + ad::shape_string(input.shape) +
                     " for grid " + std::to_string(n));
  }
  const int B = input.dim(0);
  const int L = cfg_.levels();
  const double s = cfg_.slope;
  Var x = tape.constant(input);
  x = ad::leaky_relu(conv(tape, p, x, "enc.in", 1), s);
  for (int l = 0; l < L; ++l) {
    const std::string nm = "enc" + std::to_string(l);
    x = resblock(tape, p, x, nm + ".res");
    x = ad::leaky_relu(conv(tape, p, x, nm + ".down", 2), s);
  }
  const int cl = cfg_.channels(L);
  Var z = linear(p, ad::reshape(x, {B, cl * 16}), "enc.fc");
  z = ad::leaky_relu(linear(p, z, "pred.fc1"), s);
  z = ad::leaky_relu(linear(p, z, "pred.fc2"), s);
  x = ad::leaky_relu(ad::reshape(linear(p, z, "dec.fc"), {B, cl, 4, 4}), s);
  for (int l = L - 1; l >= 0; --l) {
    const std::string nm = "dec" + std::to_string(l);
    x = conv(tape, p, ad::upsample_nearest2x(x), nm + ".up", 1);
    x = ad::batch_norm(x, p[params_.index(nm + ".bn.gamma")],
                       p[params_.index(nm + ".bn.beta")],
                       params_.bn_stats()[nm + ".bn"], training);
    x = ad::pixel_norm(ad::leaky_relu(x, s));
    x = resblock(tape, p, x, nm + ".res");
  }
  x = conv(tape, p, x, "dec.out", 1);
  Tensor mask({B, 1, n, n});
  for (int b = 0; b < B; ++b) {
    std::copy(mask_plane_.data.begin(), mask_plane_.data.end(),
              mask.data.begin() + static_cast<std::ptrdiff_t>(uz(b) * uz(n * n)));
  }
  x = ad::mul_const(x, mask);
  check_finite(x, "cnn output");
  return x;
}

std::vector<double> CnnModel::predict(const Tensor& input) {
  Tape tape;
  Var out = forward(tape, params_.bind(tape), input, false);
  return out.value().data;
}

// --- training ----------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) {
    throw ConfigError("train: epochs and batch_size must be positive");
  }
  if (lead_hours < 1) {
    throw ConfigError("train: lead_hours must be positive");
  }
  if (!(adam.lr >= 0.0)) {
    throw ConfigError("train: lr must be non-negative");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"lead_hours", lead_hours},
          {"max_samples_per_epoch", max_samples_per_epoch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.lead_hours = j.value("lead_hours", c.lead_hours);
  c.max_samples_per_epoch = j.value("max_samples_per_epoch", c.max_samples_per_epoch);
  c.validate();
  return c;
}

nlohmann::json LossHistory::to_json() const {
  return {{"train", train}, {"val", val}};
}

double evaluate_loss(TrainProblem& problem, SplitLabel which, int batch_size) {
  const std::size_t n = problem.count(which);
  if (n == 0) {
    return std::nan("");
  }
  std::vector<double> per(n);
  std::vector<std::size_t> ids;
  for (std::size_t b0 = 0; b0 < n; b0 += uz(batch_size)) {
    const std::size_t b1 = std::min(n, b0 + uz(batch_size));
    ids.resize(b1 - b0);
    std::iota(ids.begin(), ids.end(), b0);
    Tape tape;
    problem.batch_loss(tape, problem.params().bind(tape), which, ids, false,
                       std::span<double>(per).subspan(b0, b1 - b0));
  }
  double s = 0.0;
  for (double v : per) {
    s += v;
  }
  return s / static_cast<double>(n);
}

LossHistory train(TrainProblem& problem, const TrainConfig& cfg,
                  const std::function<void(int, double, double)>& on_epoch) {
  cfg.validate();
  ad::ParamSet& params = problem.params();
  const std::size_t n_train = problem.count(SplitLabel::train);
  if (n_train == 0) {
    throw ConfigError("train: no training samples");
  }
  const std::size_t used = cfg.max_samples_per_epoch > 0
                               ? std::min(n_train, cfg.max_samples_per_epoch)
                               : n_train;
  ad::Adam adam(params, cfg.adam);
  LossHistory hist;
  std::vector<std::size_t> perm(n_train);
  std::vector<double> per(n_train);
  std::vector<double> batch_losses;
  std::vector<const Tensor*> grads(params.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n_train - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.below(i + 1)]);
    }
    std::fill(per.begin(), per.end(), 0.0);
    for (std::size_t b0 = 0; b0 < used; b0 += uz(cfg.batch_size)) {
      const std::size_t b1 = std::min(used, b0 + uz(cfg.batch_size));
      std::span<const std::size_t> ids(perm.data() + b0, b1 - b0);
      batch_losses.assign(ids.size(), 0.0);
      Tape tape;
      const std::vector<Var> vars = params.bind(tape);
      Var loss = problem.batch_loss(tape, vars, SplitLabel::train, ids, true, batch_losses);
      if (!std::isfinite(loss.value().data[0])) {
        throw TrainingError(epoch, "training loss became non-finite at epoch " +
                                       std::to_string(epoch));
      }
      tape.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        grads[i] = &tape.grad(vars[i].id);
      }
      adam.step(params, grads);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        per[ids[k]] = batch_losses[k];
      }
    }
    double s = 0.0;
    for (double v : per) {
      s += v;
    }
    const double train_loss = s / static_cast<double>(used);
    const double val_loss = evaluate_loss(problem, SplitLabel::val, cfg.batch_size);
    if (!std::isfinite(train_loss) ||
        (problem.count(SplitLabel::val) > 0 && !std::isfinite(val_loss))) {
      throw TrainingError(epoch, "loss became non-finite at epoch " + std::to_string(epoch));
    }
    hist.train.push_back(train_loss);
    hist.val.push_back(val_loss);
    if (on_epoch) {
      on_epoch(epoch, train_loss, val_loss);
    }
  }
  return hist;
}

std::array<std::vector<std::int64_t>, 3>
sample_times(std::span<const SplitLabel> split, std::size_t steps, int lead_steps) {
  if (lead_steps < 1) {
    throw ConfigError("lead must be a positive number of grid steps");
  }
  if (split.size() != steps) {
    throw ShapeError("split labels do not cover the time grid");
  }
  std::array<std::vector<std::int64_t>, 3> out;
  for (std::size_t t = 0; t + uz(lead_steps) < steps; ++t) {
    out[static_cast<std::size_t>(split[t])].push_back(static_cast<std::int64_t>(t));
  }
  return out;
}

StationProblem::StationProblem(GnnModel& model, const StationFeatures& features,
                               const GraphTopology& graph, std::span<const double> theta,
                               std::size_t steps, int lead_steps,
                               std::span<const SplitLabel> split)
    : model_(model), features_(features), graph_(graph), theta_(theta),
      lead_(lead_steps), times_(sample_times(split, steps, lead_steps)) {
  if (theta.size() != steps * uz(features.stations) ||
      graph.nodes() != features.stations) {
    throw ShapeError("station problem: theta, features and graph disagree");
  }
}

std::size_t StationProblem::count(SplitLabel which) const {
  return times_[static_cast<std::size_t>(which)].size();
}

const std::vector<std::int64_t>& StationProblem::times(SplitLabel which) const {
  return times_[static_cast<std::size_t>(which)];
}

const ad::Csr& StationProblem::replicated(int batch) {
  auto it = cache_.find(batch);
  if (it == cache_.end()) {
    it = cache_.emplace(batch, graph_.csr.replicate(batch)).first;
  }
  return it->second;
}

Var StationProblem::batch_loss(Tape& tape, const std::vector<Var>& params,
                               SplitLabel which, std::span<const std::size_t> ids,
                               bool, std::span<double> per_sample) {
  const auto& times = times_[static_cast<std::size_t>(which)];
  const int B = static_cast<int>(ids.size());
  const std::size_t S = uz(features_.stations);
  std::vector<double> in(uz(B) * S);
  Tensor target({B * static_cast<int>(S), 1});
  for (int b = 0; b < B; ++b) {
    const auto t = static_cast<std::size_t>(times[ids[uz(b)]]);
    std::copy_n(theta_.data() + t * S, S, in.data() + uz(b) * S);
    std::copy_n(theta_.data() + (t + uz(lead_)) * S, S, target.data.data() + uz(b) * S);
  }
  Var pred = model_.forward(tape, params, features_.build(in, B), replicated(B));
  for (int b = 0; b < B; ++b) {
    per_sample[uz(b)] =
        loss_station(std::span<const double>(pred.value().data).subspan(uz(b) * S, S),
                     std::span<const double>(target.data).subspan(uz(b) * S, S));
  }
  return ad::mse_loss(pred, target);
}

MeshProblem::MeshProblem(CnnModel& model, const Mask& inland,
                         std::span<const double> fields, std::size_t steps,
                         int lead_steps, std::span<const SplitLabel> split)
    : model_(model), inland_(inland), fields_(fields),
      px_(uz(model.config().grid) * uz(model.config().grid)), lead_(lead_steps),
      times_(sample_times(split, steps, lead_steps)) {
  if (fields.size() != steps * px_ || inland.size() != px_) {
    throw ShapeError("mesh problem: fields or mask do not match the grid");
  }
  if (std::none_of(inland.begin(), inland.end(), [](std::uint8_t m) { return m != 0; })) {
    throw ConfigError("mesh problem: empty inland mask");
  }
}

std::size_t MeshProblem::count(SplitLabel which) const {
  return times_[static_cast<std::size_t>(which)].size();
}

Var MeshProblem::batch_loss(Tape& tape, const std::vector<Var>& params, SplitLabel which,
                            std::span<const std::size_t> ids, bool training,
                            std::span<double> per_sample) {
  const auto& times = times_[static_cast<std::size_t>(which)];
  const int B = static_cast<int>(ids.size());
  const int n = model_.config().grid;
  Tensor in({B, 1, n, n});
  Tensor target({B, 1, n, n});
  for (int b = 0; b < B; ++b) {
    const auto t = static_cast<std::size_t>(times[ids[uz(b)]]);
    std::copy_n(fields_.data() + t * px_, px_, in.data.data() + uz(b) * px_);
    std::copy_n(fields_.data() + (t + uz(lead_)) * px_, px_,
                target.data.data() + uz(b) * px_);
  }
  Var pred = model_.forward(tape, params, in, training);
  for (int b = 0; b < B; ++b) {
    per_sample[uz(b)] =
        loss_mesh(std::span<const double>(pred.value().data).subspan(uz(b) * px_, px_),
                  std::span<const double>(target.data).subspan(uz(b) * px_, px_), inland_);
  }
  return ad::masked_mse_loss(pred, target, inland_);
}

std::vector<double>
rollout(const std::function<std::vector<double>(const std::vector<double>&)>& step,
        std::vector<double> state, int k) {
  if (k < 1) {
    throw ConfigError("rollout needs at least one repetition");
  }
  for (int i = 0; i < k; ++i) {
    state = step(state);
  }
  return state;
}

} // namespace tptkit
