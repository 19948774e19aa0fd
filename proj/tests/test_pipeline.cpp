#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/pipeline.hpp"
#include "geokpi/synth.hpp"
#include "geokpi/util.hpp"
#include "support.hpp"

using namespace geokpi;
using namespace geokpi::pipeline;
using nlohmann::json;
using testsupport::error_of;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  synth::Scenario scenario;
  json config_doc;

  PipelineConfig config() const { return PipelineConfig::from_json(config_doc, dir); }
};

Fixture make_fixture(const std::string& name, int per_archetype = 8, double noise = 0.02,
                     int days = 10) {
  Fixture f;
  f.dir = testsupport::scratch_dir(name);
  auto spec = synth::default_scenario(5, noise);
  spec.cells_per_archetype = per_archetype;
  spec.days = days;
  f.scenario = synth::generate_scenario(spec);
  const auto files = synth::write_scenario(f.scenario, f.dir / "data");
  f.config_doc = {
      {"cells_csv", "data/cells.csv"},
      {"raster_manifest", "data/rasters/manifest.csv"},
      {"kpi_csv", "data/kpi.csv"},
      {"output_dir", "out"},
      {"kpi_name", "prb_utilization"},
      {"backbone", "toy"},
      {"training", {{"epochs", 2}, {"hidden_size", 16}}},
      {"seed", 3},
  };
  return f;
}

// Ground-truth labels as integers in the pipeline's cell order.
double ari_against_truth(const Fixture& f, const profiling::ClusterModel& m) {
  std::vector<int> truth, got;
  for (const auto& [id, label] : f.scenario.label_index) {
    truth.push_back(label);
    got.push_back(m.membership.at(id));
  }
  return testsupport::ari_pair_counting(truth, got);
}

std::map<std::string, std::string> checksums(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = util::sha256_file(e.path());
  }
  return out;
}

}  // namespace

TEST(PipelineConfig, ParsingAndRunId) {
  const auto f = make_fixture("cfg", 2, 0.02, 7);
  const auto c = f.config();
  EXPECT_EQ(c.resolve(c.cells_csv), f.dir / "data/cells.csv");
  EXPECT_EQ(c.max_fill, 0);
  EXPECT_EQ(c.training.epochs, 2);
  EXPECT_EQ(c.training.optimizer, "sgd");
  EXPECT_EQ(c.clustering.k_max, 10);
  EXPECT_EQ(config_hash(c), config_hash(f.config()));
  EXPECT_EQ(config_hash(c).size(), 64u);

  auto doc = f.config_doc;
  doc["seed"] = 4;
  EXPECT_NE(config_hash(PipelineConfig::from_json(doc, f.dir)), config_hash(c));
  // Round trip through to_json keeps the hash.
  EXPECT_EQ(config_hash(PipelineConfig::from_json(c.to_json(), f.dir)), config_hash(c));

  std::ofstream(f.dir / "config.json") << f.config_doc.dump();
  EXPECT_EQ(config_hash(PipelineConfig::load(f.dir / "config.json")), config_hash(c));

  auto bad = f.config_doc;
  bad["colour"] = "blue";
  EXPECT_EQ(error_of([&] { PipelineConfig::from_json(bad, f.dir); }), ErrorCode::validation);
  bad = f.config_doc;
  bad.erase("kpi_name");
  EXPECT_EQ(error_of([&] { PipelineConfig::from_json(bad, f.dir); }), ErrorCode::validation);
  bad = f.config_doc;
  bad["clustering"] = {{"k_min", 4}, {"k_max", 2}};
  EXPECT_EQ(error_of([&] { PipelineConfig::from_json(bad, f.dir); }), ErrorCode::validation);
  bad = f.config_doc;
  bad["training"] = {{"epochs", -1}};
  EXPECT_EQ(error_of([&] { PipelineConfig::from_json(bad, f.dir); }), ErrorCode::validation);
}

TEST(RunPipeline, SyntheticScenarioEndToEnd) {
  const auto f = make_fixture("e2e");
  const auto run = run_pipeline(f.config());
  EXPECT_TRUE(run.completed);
  for (const auto& s : run.stages) EXPECT_EQ(s.status, "completed") << s.name;
  EXPECT_EQ(run.run_id, config_hash(f.config()).substr(0, 16));
  EXPECT_TRUE(verify_artifacts(run));
  EXPECT_EQ(util::trim(util::read_text(f.dir / "out" / "current")), run.run_id);

  const auto snap = load_run(run.run_dir);
  EXPECT_EQ(snap->clusters.k, 3);
  EXPECT_GE(ari_against_truth(f, snap->clusters), 0.9);

  // Exactly one model per cluster, on disk and in memory.
  std::size_t model_files = 0;
  for (const auto& [rel, sum] : run.artifacts) model_files += rel.rfind("models/", 0) == 0;
  EXPECT_EQ(model_files, static_cast<std::size_t>(snap->clusters.k));
  EXPECT_EQ(snap->models.size(), static_cast<std::size_t>(snap->clusters.k));

  // Provenance stamped into models and the summary.
  const auto model_doc = json::parse(util::read_text(run.run_dir / "models" / "cluster_0.json"));
  EXPECT_EQ(model_doc["provenance"]["run_id"], run.run_id);
  EXPECT_EQ(model_doc["provenance"]["config_hash"], run.config_hash);
  const auto summary = json::parse(util::read_text(run.run_dir / "metrics" / "summary.json"));
  EXPECT_EQ(summary["provenance"]["run_id"], run.run_id);

  // Labels are never read.
  for (const auto& p : run.inputs_read) EXPECT_EQ(p.find("truth"), std::string::npos) << p;
  EXPECT_FALSE(run.inputs_read.empty());

  EXPECT_EQ(snap->experiment1.cells.size(), 24u);
  EXPECT_TRUE(testsupport::mse_le_mae(snap->experiment1));
  ASSERT_TRUE(snap->experiment2);
  EXPECT_TRUE(testsupport::mse_le_mae(*snap->experiment2));
  // ceil(0.2 * m) masked per cluster.
  std::size_t expected_masked = 0;
  for (int n : snap->clusters.member_counts()) expected_masked += (n + 4) / 5;
  EXPECT_EQ(snap->experiment2->cells.size(), expected_masked);

  // The manifest round-trips.
  const auto manifest = json::parse(util::read_text(run.run_dir / "manifest.json"));
  const auto back = PipelineRun::from_manifest(manifest, run.run_dir);
  EXPECT_EQ(back.artifacts, run.artifacts);
  EXPECT_EQ(back.stages.size(), 6u);
  EXPECT_TRUE(back.completed);
}

TEST(RunPipeline, RerunIsIdentical) {
  const auto f = make_fixture("rerun", 6);
  const auto a = run_pipeline(f.config());
  const auto metrics = util::read_text(a.run_dir / "metrics" / "experiment1.csv");
  const auto b = run_pipeline(f.config());
  EXPECT_EQ(a.run_id, b.run_id);
  EXPECT_EQ(util::read_text(b.run_dir / "metrics" / "experiment1.csv"), metrics);
  EXPECT_EQ(a.artifacts, b.artifacts);
}

TEST(RunPipeline, MissingRasterManifestFailsFirstStage) {
  auto f = make_fixture("missing", 2, 0.02, 7);
  f.config_doc["raster_manifest"] = "data/nowhere/manifest.csv";
  try {
    run_pipeline(f.config());
    FAIL() << "run succeeded";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "geometry");
    EXPECT_NE(std::string(e.what()).find("nowhere/manifest.csv"), std::string::npos) << e.what();
  }
  const auto runs = f.dir / "out" / "runs";
  const auto run_dir = runs / config_hash(f.config()).substr(0, 16);
  const auto manifest = json::parse(util::read_text(run_dir / "manifest.json"));
  EXPECT_EQ(manifest["stages"][0]["status"], "failed");
  EXPECT_EQ(manifest["stages"][1]["status"], "pending");
  EXPECT_FALSE(manifest["completed"].get<bool>());
  EXPECT_FALSE(fs::exists(f.dir / "out" / "current"));
  EXPECT_EQ(error_of([&] { load_run(run_dir); }), ErrorCode::not_ready);
}

TEST(RunPipeline, LaterFailureKeepsEarlierArtifacts) {
  auto f = make_fixture("partial", 2, 0.02, 7);
  f.config_doc["clustering"] = {{"k_max", 4}};
  // A KPI file missing every series fails the training stage.
  std::ofstream(f.dir / "data" / "other.csv") << "cell_id,timestamp,kpi_name,value\n"
                                              << "ghost,2024-03-01T00:00:00Z,prb_utilization,1\n";
  f.config_doc["kpi_csv"] = "data/other.csv";
  try {
    run_pipeline(f.config());
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "training");
    EXPECT_EQ(e.cause(), ErrorCode::ingestion);
  }
  const auto run_dir = f.dir / "out" / "runs" / config_hash(f.config()).substr(0, 16);
  EXPECT_TRUE(fs::exists(run_dir / "geometry" / "coverage.csv"));
  EXPECT_TRUE(fs::exists(run_dir / "clustering" / "centroids.csv"));
}

TEST(RunPipeline, LockedRunIsRefused) {
  auto f = make_fixture("lock", 2, 0.02, 7);
  f.config_doc["clustering"] = {{"k_max", 4}};
  const auto runs = f.dir / "out" / "runs";
  fs::create_directories(runs);
  const auto lock = runs / (config_hash(f.config()).substr(0, 16) + ".lock");
  std::ofstream(lock) << "held";
  EXPECT_EQ(error_of([&] { run_pipeline(f.config()); }), ErrorCode::locked);
  fs::remove(lock);
  EXPECT_NO_THROW(run_pipeline(f.config()));
  EXPECT_FALSE(fs::exists(lock));
}

TEST(RunPipeline, ModelCountEqualsClusterCount) {
  const auto f = make_fixture("count", 4, 0.02, 7);
  for (int k : {1, 2, 4, 7}) {
    auto doc = f.config_doc;
    doc["clustering"] = {{"k_override", k}};
    doc["experiments"] = {{"cold_start", false}};
    doc["training"]["epochs"] = 0;
    const auto run = run_pipeline(PipelineConfig::from_json(doc, f.dir));
    std::size_t models = 0;
    for (const auto& e : fs::directory_iterator(run.run_dir / "models")) models += e.is_regular_file();
    EXPECT_EQ(models, static_cast<std::size_t>(k)) << "N=12 k=" << k;
  }
}

TEST(RunPipeline, NoiseFreeClusterAverageIsTemplate) {
  const auto f = make_fixture("clean", 5, 0.0, 7);
  const auto run = run_pipeline(f.config());
  const auto snap = load_run(run.run_dir);
  ASSERT_DOUBLE_EQ(ari_against_truth(f, snap->clusters), 1.0);
  const auto averages =
      kpi::read_kpi_csv(run.run_dir / "kpi" / "cluster_average.csv", "prb_utilization").series;
  for (const auto& [id, k] : snap->clusters.membership) {
    const auto archetype = f.scenario.labels.at(id);
    const auto tmpl = archetype == "residential"  ? synth::residential_template()
                      : archetype == "industrial" ? synth::industrial_template()
                                                  : synth::forest_template();
    kpi::KpiSeries tiled;
    for (int d = 0; d < 7; ++d) tiled.values.insert(tiled.values.end(), tmpl.begin(), tmpl.end());
    const auto expected = kpi::normalize(tiled, {0, kpi::temporal_split(tiled).boundary}).series;
    const auto& avg = averages.at("cluster_" + std::to_string(k));
    ASSERT_EQ(avg.size(), expected.size());
    for (std::size_t t = 0; t < avg.size(); ++t) ASSERT_NEAR(avg.values[t], expected.values[t], 1e-12);
  }
}

class WhatIf : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    fixture_ = new Fixture(make_fixture("whatif", 6));
    run_ = new PipelineRun(run_pipeline(fixture_->config()));
    snap_ = load_run(run_->run_dir);
  }
  static void TearDownTestSuite() {
    snap_.reset();
    delete run_;
    delete fixture_;
  }
  static Fixture* fixture_;
  static PipelineRun* run_;
  static std::shared_ptr<const RunSnapshot> snap_;
};
Fixture* WhatIf::fixture_ = nullptr;
PipelineRun* WhatIf::run_ = nullptr;
std::shared_ptr<const RunSnapshot> WhatIf::snap_;

TEST_F(WhatIf, ExistingCellLandsInItsCluster) {
  for (const auto& cell : fixture_->scenario.cells) {
    auto c = cell;
    c.cell_id = "candidate";
    const auto r = what_if(c, snap_.get());
    EXPECT_EQ(r.cluster, snap_->clusters.membership.at(cell.cell_id)) << cell.cell_id;
    EXPECT_EQ(r.run_id, run_->run_id);
    EXPECT_EQ(r.forecast_normalized.size(), 32u);
    EXPECT_EQ(r.forecast_denormalized.size(), 32u);
    EXPECT_EQ(r.forecast_kind, "cluster-typical forecast");
  }
}

TEST_F(WhatIf, ForestRegionGoesToForestCluster) {
  std::map<int, int> forest_votes;
  for (const auto& [id, label] : fixture_->scenario.labels) {
    if (label == "forest") ++forest_votes[snap_->clusters.membership.at(id)];
  }
  const auto forest_cluster =
      std::max_element(forest_votes.begin(), forest_votes.end(),
                       [](auto& a, auto& b) { return a.second < b.second; })->first;
  const auto centre = synth::region_center(fixture_->scenario, "forest");
  for (double az : {0.0, 90.0, 200.0}) {
    const geometry::CellConfig c{"new", centre.lat, centre.lon, az, 0.0, 200.0};
    const auto r = what_if(c, snap_.get());
    EXPECT_EQ(r.cluster, forest_cluster) << "azimuth " << az;
    EXPECT_GE(r.distance, 0.0);
    EXPECT_EQ(r.ood_threshold, snap_->clusters.ood_threshold());
  }
}

TEST_F(WhatIf, DeterministicAndReadOnly) {
  const auto before = checksums(run_->run_dir);
  const auto& cell = fixture_->scenario.cells[3];
  const auto a = what_if(cell, snap_.get()), b = what_if(cell, snap_.get());
  EXPECT_EQ(a.forecast_normalized, b.forecast_normalized);
  EXPECT_EQ(a.distance, b.distance);
  EXPECT_EQ(a.cluster_summary.member_count, b.cluster_summary.member_count);
  EXPECT_EQ(checksums(run_->run_dir), before);
  EXPECT_TRUE(verify_artifacts(run_->run_dir.empty() ? *run_ : snap_->run));

  // Seeded with the cluster model's stored history.
  const auto& model = snap_->models.at(a.cluster);
  EXPECT_EQ(a.forecast_normalized, forecast::predict(model, model.seed_history));
  const auto& norm = model.cluster_norm;
  for (int t = 0; t < 32; ++t) {
    EXPECT_NEAR(a.forecast_denormalized[t],
                norm.min + a.forecast_normalized[t] * (norm.max - norm.min), 1e-12);
  }
  const auto summary = cluster_summary(*snap_, a.cluster);
  EXPECT_EQ(summary.member_count,
            static_cast<std::size_t>(snap_->clusters.member_counts()[a.cluster]));
  EXPECT_EQ(summary.test_mse.mean, snap_->experiment1.cluster_summaries().at(a.cluster).mse.mean);
}

TEST_F(WhatIf, Errors) {
  const geometry::CellConfig far{"x", 40.0, -100.0, 0.0, 0.0, 250.0};
  EXPECT_EQ(error_of([&] { what_if(far, snap_.get()); }), ErrorCode::out_of_extent);
  EXPECT_EQ(error_of([&] { what_if(fixture_->scenario.cells[0], nullptr); }), ErrorCode::not_ready);
  auto bad = fixture_->scenario.cells[0];
  bad.range_m = 0;
  EXPECT_EQ(error_of([&] { what_if(bad, snap_.get()); }), ErrorCode::degenerate_geometry);
  EXPECT_EQ(error_of([&] { load_run(fixture_->dir / "nothing"); }), ErrorCode::not_ready);
}

TEST_F(WhatIf, CellForecastMatchesSeries) {
  const auto& id = fixture_->scenario.cells[0].cell_id;
  const auto f = cell_forecast(*snap_, id, 5);
  const auto& series = snap_->normalized.at(id);
  const auto boundary = kpi::temporal_split(series).boundary;
  ASSERT_EQ(f.history.size(), 96u);
  ASSERT_EQ(f.forecast.size(), 32u);
  ASSERT_EQ(f.timestamps.size(), 32u);
  EXPECT_EQ(f.history[0], series.values[boundary + 5]);
  EXPECT_EQ(f.actual[0], series.values[boundary + 5 + 96]);
  EXPECT_EQ(f.timestamps[0], series.timestamp(boundary + 5 + 96));
  EXPECT_EQ(f.cluster, snap_->clusters.membership.at(id));
  EXPECT_EQ(f.forecast, forecast::predict(snap_->models.at(f.cluster), f.history));
  EXPECT_NEAR(f.actual_denormalized[0], fixture_->scenario.series[0].values[boundary + 101], 1e-9);
  EXPECT_EQ(error_of([&] { cell_forecast(*snap_, "nope"); }), ErrorCode::validation);
  EXPECT_EQ(error_of([&] { cell_forecast(*snap_, id, 100000); }), ErrorCode::validation);
}
