#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tptkit/error.hpp"
#include "tptkit/pipeline.hpp"

using namespace tptkit;
using nlohmann::json;

namespace {

void report_error(const std::string& command, const std::string& kind, const std::string& msg) {
  json e = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", msg}};
  std::cerr << e.dump() << '\n';
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"tptkit: station temperature forecasting pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, corpus, artifacts, reports;
  int threads = 0;
  bool quiet = false, verbose = false;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--corpus", corpus, "Corpus directory (overrides paths.corpus)");
  app.add_option("--artifacts", artifacts, "Artifact directory (overrides paths.artifacts)");
  app.add_option("--reports", reports, "Report directory (overrides paths.reports)");
  app.add_option("-j,--threads", threads, "Worker threads (sets TPTKIT_THREADS)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Do not print the JSON summary");
  app.add_flag("-v,--verbose", verbose, "Log training losses per epoch");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  int synth_stations = 0, synth_days = 0;
  synth->add_option("-o,--out", synth_out, "Output directory (default: corpus path)");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--stations", synth_stations, "Station count")->check(CLI::PositiveNumber);
  synth->add_option("--days", synth_days, "Days of hourly data")->check(CLI::PositiveNumber);

  app.add_subcommand("ingest", "Parse the corpus onto the time grid");
  app.add_subcommand("qc", "Range and deviation checks with gap filling");
  app.add_subcommand("climatology", "Per-station periodic mean");
  app.add_subcommand("transform", "Fluctuations, potential temperature, split, standardization");
  app.add_subcommand("krige", "Variogram fit and kriged mesh sequence");
  app.add_subcommand("stats", "Integral time scales and spatial correlation");

  std::string model = "gnn", split = "test";
  int lead = 12, steps = 2;
  auto* train = app.add_subcommand("train", "Train a predictor");
  train->add_option("-m,--model", model, "gnn or cnn")->check(CLI::IsMember({"gnn", "cnn"}));
  train->add_option("-l,--lead", lead, "Lead time in hours")->check(CLI::PositiveNumber);

  auto* predict = app.add_subcommand("predict", "Write station forecasts for a split");
  predict->add_option("-m,--model", model, "gnn, cnn, persistence or climatology")
      ->check(CLI::IsMember({"gnn", "cnn", "persistence", "climatology"}));
  predict->add_option("-l,--lead", lead, "Lead time in hours")->check(CLI::PositiveNumber);
  predict->add_option("-s,--split", split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* rollout = app.add_subcommand("rollout", "Iterate a trained predictor");
  rollout->add_option("-m,--model", model, "gnn or cnn")->check(CLI::IsMember({"gnn", "cnn"}));
  rollout->add_option("-l,--lead", lead, "Lead of the trained model in hours")
      ->check(CLI::PositiveNumber);
  rollout->add_option("-k,--steps", steps, "Number of applications")->check(CLI::PositiveNumber);
  rollout->add_option("-s,--split", split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* evaluate = app.add_subcommand("evaluate", "RMSE against observations");
  std::string pred, label, truth, eval_out;
  evaluate->add_option("-l,--lead", lead, "Lead time in hours")->check(CLI::PositiveNumber);
  evaluate->add_option("-s,--split", split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--pred", pred, "Evaluate a single forecast CSV")->check(CLI::ExistingFile);
  evaluate->add_option("--label", label, "Model name for --pred");
  evaluate->add_option("--truth", truth,
                       "Corpus directory with observations.csv, or an artifact directory")
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("-o,--out", eval_out, "Output directory (default: reports path)");

  auto* sweep = app.add_subcommand("sweep", "Train the mesh predictor over a width grid");
  std::vector<int> widths;
  sweep->add_option("-w,--widths", widths, "Predictor widths, comma separated")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  sweep->add_option("-l,--lead", lead, "Lead time in hours")->check(CLI::PositiveNumber);

  app.add_subcommand("report", "Markdown and JSON summary of the reports directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  try {
    if (threads > 0) ::setenv("TPTKIT_THREADS", std::to_string(threads).c_str(), 1);
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
    if (!corpus.empty()) cfg.corpus = corpus;
    if (!artifacts.empty()) cfg.artifacts = artifacts;
    if (!reports.empty()) cfg.reports = reports;
    if (cmd == "synth") {
      if (synth->count("--seed")) cfg.synth.seed = synth_seed;
      if (synth_stations) cfg.synth.n_stations = synth_stations;
      if (synth_days) cfg.synth.days = synth_days;
      cfg.synth.validate();
    }
    Pipeline p(cfg);
    p.set_verbose(verbose);

    json out;
    if (cmd == "synth") out = p.synth(synth_out.empty() ? std::nullopt : std::optional<std::filesystem::path>(synth_out));
    else if (cmd == "ingest") out = p.ingest();
    else if (cmd == "qc") out = p.qc();
    else if (cmd == "climatology") out = p.climatology();
    else if (cmd == "transform") out = p.transform();
    else if (cmd == "krige") out = p.krige();
    else if (cmd == "stats") out = p.stats();
    else if (cmd == "train") out = p.train(model, lead);
    else if (cmd == "predict") out = p.predict(model, lead, parse_split(split));
    else if (cmd == "rollout") out = p.rollout(model, lead, steps, parse_split(split));
    else if (cmd == "evaluate") {
      EvaluateOptions o;
      o.lead_hours = lead;
      o.split = parse_split(split);
      if (!pred.empty()) o.pred = pred;
      o.label = label;
      if (!truth.empty()) o.truth = truth;
      if (!eval_out.empty()) o.out = eval_out;
      out = p.evaluate(o);
    } else if (cmd == "sweep") out = p.sweep(widths.empty() ? cfg.sweep_widths : widths, lead);
    else if (cmd == "report") out = p.report();

    if (!quiet) std::cout << json{{"status", "ok"}, {"command", cmd}, {"result", out}}.dump(2) << '\n';
    return 0;
  } catch (const TrainingError& e) {
    report_error(cmd, e.kind(), e.what());
    return 3;
  } catch (const Error& e) {
    report_error(cmd, e.kind(), e.what());
    return e.kind() == "config" ? 2 : 1;
  } catch (const std::exception& e) {
    report_error(cmd, "internal", e.what());
    return 1;
  }
}
