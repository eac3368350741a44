#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tptkit/core_model.hpp"
#include "tptkit/evaluate.hpp"
#include "tptkit/gridding.hpp"
#include "tptkit/ingest_qc.hpp"
#include "tptkit/predictors.hpp"
#include "tptkit/stats.hpp"
#include "tptkit/synth.hpp"

namespace tptkit {

inline constexpr const char* kVersion = "0.1.0";

/// Everything the subcommands need. Loaded from a JSON file; every key is
/// optional and falls back to the desk-scale defaults below.
struct PipelineConfig {
  std::filesystem::path corpus = "corpus";
  std::filesystem::path artifacts = "artifacts";
  std::filesystem::path reports = "reports";

  SynthConfig synth;
  std::optional<GridSpec> grid; // defaults to the corpus grid.json
  double buffer_km = 30.0;
  QcConfig qc;

  SplitFractions split;
  std::uint64_t split_seed = 7;
  int holdout_year = 0; // 0 = seeded random split

  int clim_window_days = 21;
  std::vector<int> clim_years;

  VariogramKind variogram_kind = VariogramKind::exponential;
  bool fit_variogram = true;
  VariogramModel variogram; // used when fit_variogram is false
  double variogram_bin_km = 5.0;
  double variogram_max_lag_km = 150.0;
  int variogram_snapshots = 240;

  int its_max_lag_hours = 720;
  int corr_snapshots = 500;

  GnnConfig gnn;
  CnnConfig cnn;
  TrainConfig train_gnn;
  TrainConfig train_cnn;
  nlohmann::json train_per_lead = nlohmann::json::object(); // {"6": {"gnn": {...}}}
  std::vector<int> sweep_widths{8, 16, 32, 64, 128};
  TrainConfig train_sweep;

  PipelineConfig();
  TrainConfig train_config(const std::string& model, int lead_hours) const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  /// FNV-1a of the canonical JSON dump without `paths`, as 16 hex digits.
  std::string hash() const;
};

/// A dataset persisted under `<artifacts>/<stage>/`.
Dataset load_stage_dataset(const std::filesystem::path& dir, std::string_view producer);
void save_stage_dataset(const std::filesystem::path& dir, const Dataset& d,
                        const nlohmann::json& meta);
void write_stations_csv(const std::filesystem::path& path,
                        const std::vector<StationMeta>& stations);

/// Time grid from `synth.json` when present, otherwise from the smallest
/// timestamp spacing and extent of the observation file.
TimeGrid infer_time_grid(const std::filesystem::path& corpus_dir);

struct EvaluateOptions {
  int lead_hours = 12;
  SplitLabel split = SplitLabel::test;
  std::optional<std::filesystem::path> pred; // single forecast file
  std::string label;                         // name for `pred`
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> out;
};

/// Subcommand implementations; each returns a short JSON summary and records
/// itself in `<artifacts>/manifest.json`.
class Pipeline {
public:
  explicit Pipeline(PipelineConfig cfg);

  nlohmann::json synth(const std::optional<std::filesystem::path>& out = {});
  nlohmann::json ingest();
  nlohmann::json qc();
  nlohmann::json climatology();
  nlohmann::json transform();
  nlohmann::json krige();
  nlohmann::json stats();
  nlohmann::json train(const std::string& model, int lead_hours);
  nlohmann::json predict(const std::string& model, int lead_hours, SplitLabel split);
  nlohmann::json rollout(const std::string& model, int lead_hours, int steps,
                         SplitLabel split);
  nlohmann::json evaluate(const EvaluateOptions& opt);
  nlohmann::json sweep(const std::vector<int>& widths, int lead_hours);
  nlohmann::json report();

  const PipelineConfig& config() const { return cfg_; }
  /// Per-epoch loss lines on stderr.
  void set_verbose(bool v) { verbose_ = v; }
  std::filesystem::path stage_dir(const std::string& stage) const;

private:
  /// Baseline predictions when absent; model predictions when absent or older
  /// than the trained weights.
  void refresh_predictions(int lead_hours, SplitLabel split);
  void record(const std::string& stage, std::uint64_t seed,
              const std::vector<std::filesystem::path>& outputs,
              const nlohmann::json& extra = nlohmann::json::object());

  PipelineConfig cfg_;
  bool verbose_ = false;
};

SplitLabel parse_split(const std::string& s);
int lead_steps(const TimeGrid& grid, int lead_hours);

} // namespace tptkit
