#include "doctest.h"

#include <filesystem>

#include "tptkit/error.hpp"
#include "tptkit/io.hpp"
#include "tptkit/pipeline.hpp"

using namespace tptkit;
namespace fs = std::filesystem;

TEST_CASE("config round trips and hashes stably") {
  PipelineConfig c;
  auto back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);

  auto j = c.to_json();
  j["variogram"]["range_m"] = 40000.0;
  CHECK(PipelineConfig::from_json(j).hash() != c.hash());

  PipelineConfig moved = c;
  moved.artifacts = "/elsewhere/artifacts";
  CHECK(moved.hash() == c.hash());
}

TEST_CASE("config overrides are partial") {
  auto c = PipelineConfig::from_json(
      {{"train", {{"gnn", {{"epochs", 3}}}, {"per_lead", {{"6", {{"gnn", {{"lr", 0.01}}}}}}}}},
       {"split", {{"seed", 11}}}});
  CHECK(c.train_gnn.epochs == 3);
  CHECK(c.train_gnn.batch_size == PipelineConfig{}.train_gnn.batch_size);
  CHECK(c.split_seed == 11);
  CHECK(c.train_config("gnn", 6).adam.lr == 0.01);
  CHECK(c.train_config("gnn", 12).adam.lr == PipelineConfig{}.train_gnn.adam.lr);
  CHECK(c.train_config("gnn", 6).lead_hours == 6);
}

TEST_CASE("unknown config keys are rejected") {
  CHECK_THROWS_AS(PipelineConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"split", {{"tran", 0.8}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/tptkit.json"), ConfigError);
}

TEST_CASE("stages name their missing producer") {
  PipelineConfig c;
  auto root = fs::temp_directory_path() / "tptkit_pipeline_missing";
  fs::remove_all(root);
  c.corpus = root / "corpus";
  c.artifacts = root / "artifacts";
  c.reports = root / "reports";
  Pipeline p(c);
  auto expect = [](auto&& fn, const std::string& producer) {
    try {
      fn();
      FAIL("expected an error");
    } catch (const MissingArtifactError& e) {
      CHECK(std::string(e.what()).find("tptkit " + producer) != std::string::npos);
    }
  };
  expect([&] { p.ingest(); }, "synth");
  expect([&] { p.climatology(); }, "qc");
  expect([&] { p.transform(); }, "qc");
  expect([&] { p.krige(); }, "transform");
  expect([&] { p.train("gnn", 12); }, "transform");
  expect([&] { p.report(); }, "evaluate");
  fs::remove_all(root);
}

TEST_CASE("lead steps must divide the grid step") {
  TimeGrid g(make_time(2021, 1, 1), 60, 10);
  CHECK(lead_steps(g, 12) == 12);
  TimeGrid g3(make_time(2021, 1, 1), 180, 10);
  CHECK(lead_steps(g3, 12) == 4);
  CHECK_THROWS_AS(lead_steps(g3, 4), ConfigError);
  CHECK_THROWS_AS(parse_split("holdout"), ConfigError);
}
