// Acceptance checks. One criterion per invocation:
//   acceptance <criterion>     or     acceptance all
// Prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>

#include <json.hpp>

#include "geokpi/forecast.hpp"
#include "geokpi/geometry.hpp"
#include "geokpi/kpi.hpp"
#include "geokpi/pipeline.hpp"
#include "geokpi/profiling.hpp"
#include "geokpi/synth.hpp"
#include "geokpi/vision.hpp"
#include "support.hpp"

using namespace geokpi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double geometry_rel_tol = 1e-3;
constexpr double invariant_tol_deg = 1e-9;
constexpr double mirror_tol_deg = 1e-6;
constexpr double min_ari = 0.9;
constexpr double min_persistence_ratio = 2.0;
constexpr double max_cold_start_rel = 0.5;

struct Outcome {
  bool pass = true;
  std::string detail;
  void fail(const std::string& why) {
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome window_count() {
  Outcome o;
  const std::pair<std::size_t, std::size_t> cases[] = {{128, 1}, {500, 373}, {5856, 5729}};
  for (auto [len, expected] : cases) {
    const auto w = kpi::make_windows(std::vector<double>(len, 0.5));
    o.note(fmt("T=%zu -> %zu", len, w.size()));
    if (w.size() != expected) o.fail(fmt("expected %zu", expected));
  }
  return o;
}

Outcome geometry_oracle() {
  Outcome o;
  const geometry::CellConfig c{"east", 0.0, 0.0, 90.0, 0.0, 1113.2};
  const auto box = geometry::sector_box(c);
  const auto far = testsupport::great_circle_midpoint(box.corners[2], box.corners[3]);
  const auto oracle = testsupport::nvector_destination({0, 0}, 90.0, 1113.2);
  const double rel = std::abs(far.lon - oracle.lon) / oracle.lon;
  o.note(fmt("far edge lon %.7f, oracle %.7f, rel %.2e", far.lon, oracle.lon, rel));
  if (rel > geometry_rel_tol) o.fail("far edge off");
  // 1113.2 m is 0.01 deg on a 6378 km equator; the mean-radius sphere is smaller.
  if (std::abs(far.lon - 0.01) > 0.01 * 0.01) o.fail("not ~0.01 deg east");
  if (std::abs(far.lat) > 1e-9) o.fail("far edge left the equator");

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> lat(-80, 80), lon(-179, 179), az(0, 360), r(10, 20000);
  int periodic_bad = 0, mirror_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const geometry::CellConfig cell{"r", lat(rng), lon(rng), az(rng), 0.0, r(rng)};
    const auto a = geometry::sector_box(cell);
    auto shifted = cell;
    shifted.azimuth += 720.0;
    const auto b = geometry::sector_box(shifted);
    auto mirrored = cell;
    mirrored.longitude = 0.0;
    auto m2 = mirrored;
    m2.azimuth = 360.0 - cell.azimuth;
    const auto ma = geometry::sector_box(mirrored), mb = geometry::sector_box(m2);
    const int swap[4] = {1, 0, 3, 2};
    for (int j = 0; j < 4; ++j) {
      if (std::abs(a.corners[j].lat - b.corners[j].lat) > invariant_tol_deg ||
          std::abs(a.corners[j].lon - b.corners[j].lon) > invariant_tol_deg) {
        ++periodic_bad;
      }
      if (std::abs(ma.corners[j].lon + mb.corners[swap[j]].lon) > mirror_tol_deg ||
          std::abs(ma.corners[j].lat - mb.corners[swap[j]].lat) > mirror_tol_deg) {
        ++mirror_bad;
      }
    }
  }
  o.note(fmt("1000 cells: periodicity violations %d, mirror violations %d", periodic_bad, mirror_bad));
  if (periodic_bad || mirror_bad) o.fail("invariant violated");
  return o;
}

Outcome clustering_oracle() {
  Outcome o;
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto blobs = testsupport::make_blobs(3, 20, 8, 20.0, 1.0, seed);
    const auto model = profiling::fit_clusters(blobs.embeddings, seed);
    std::vector<int> got;
    for (const auto& e : blobs.embeddings) got.push_back(model.membership.at(e.cell_id));
    const double ari = profiling::adjusted_rand_index(blobs.labels, got);
    if (model.k == 3 && ari == 1.0) {
      ++ok;
    } else {
      o.fail(fmt("seed %llu: k=%d ARI=%.4f", static_cast<unsigned long long>(seed), model.k, ari));
    }
  }
  o.note(fmt("%d/20 seeds with k=3 and ARI=1", ok));
  return o;
}

json scenario_config(std::uint64_t seed, int epochs) {
  json doc = {{"cells_csv", "data/cells.csv"},
              {"raster_manifest", "data/rasters/manifest.csv"},
              {"kpi_csv", "data/kpi.csv"},
              {"output_dir", "out"},
              {"kpi_name", "prb_utilization"},
              {"backbone", "toy"},
              {"seed", seed}};
  if (epochs >= 0) doc["training"] = {{"epochs", epochs}};
  return doc;
}

synth::Scenario write_scenario(const fs::path& dir, std::uint64_t seed, int per_archetype,
                               int days, double noise) {
  auto spec = synth::default_scenario(seed, noise);
  spec.cells_per_archetype = per_archetype;
  spec.days = days;
  auto scenario = synth::generate_scenario(spec);
  synth::write_scenario(scenario, dir / "data");
  return scenario;
}

Outcome end_to_end() {
  Outcome o;
  const auto dir = testsupport::scratch_dir("acceptance_e2e");
  const auto scenario = write_scenario(dir, 1, 20, 30, 0.02);
  const auto config = pipeline::PipelineConfig::from_json(scenario_config(1, -1), dir);
  const auto run = pipeline::run_pipeline(config);
  const auto snap = pipeline::load_run(run.run_dir);

  std::vector<int> truth, got;
  for (const auto& [id, label] : scenario.label_index) {
    truth.push_back(label);
    got.push_back(snap->clusters.membership.at(id));
  }
  const double ari = testsupport::ari_pair_counting(truth, got);
  o.note(fmt("k=%d ARI=%.4f", snap->clusters.k, ari));
  if (ari < min_ari) o.fail("ARI below 0.9");

  const auto exp1 = snap->experiment1.cluster_summaries();
  for (const auto& [k, s] : exp1) {
    const double ratio = s.persistence_mse.mean / s.mse.mean;
    o.note(fmt("cluster %d: MSE %.5f persistence %.5f (x%.1f)", k, s.mse.mean,
               s.persistence_mse.mean, ratio));
    if (!(ratio >= min_persistence_ratio)) o.fail(fmt("cluster %d under 2x persistence", k));
  }
  if (!snap->experiment2) {
    o.fail("no cold-start report");
    return o;
  }
  const auto exp2 = snap->experiment2->cluster_summaries();
  for (const auto& [k, s1] : exp1) {
    const auto it = exp2.find(k);
    if (it == exp2.end()) {
      o.fail(fmt("cluster %d has no cold-start result", k));
      continue;
    }
    const double rel = std::abs(it->second.mse.mean - s1.mse.mean) / s1.mse.mean;
    o.note(fmt("cluster %d cold-start MSE %.5f (rel %.2f)", k, it->second.mse.mean, rel));
    if (rel > max_cold_start_rel) o.fail(fmt("cluster %d cold-start off by %.0f%%", k, 100 * rel));
  }
  return o;
}

Outcome metric_inequality() {
  Outcome o;
  std::size_t checked = 0, violations = 0;
  auto audit = [&](const forecast::MetricsReport& r) {
    for (const auto& c : r.cells) {
      if (c.max_abs_error > 1.0) continue;
      ++checked;
      if (c.mse > c.mae) ++violations;
    }
  };
  // Pipeline evaluations over several seeds, both experiments.
  for (std::uint64_t seed : {11, 12, 13}) {
    const auto dir = testsupport::scratch_dir("acceptance_metric_" + std::to_string(seed));
    write_scenario(dir, seed, 5, 7, 0.05);
    auto doc = scenario_config(seed, 2);
    doc["training"]["hidden_size"] = 16;
    const auto run = pipeline::run_pipeline(pipeline::PipelineConfig::from_json(doc, dir));
    const auto snap = pipeline::load_run(run.run_dir);
    audit(snap->experiment1);
    if (snap->experiment2) audit(*snap->experiment2);
  }
  // Untrained models give large, varied errors.
  forecast::TrainingConfig untrained;
  untrained.epochs = 0;
  untrained.hidden_size = 8;
  std::vector<kpi::KpiSeries> cells;
  for (int i = 0; i < 10; ++i) {
    auto s = testsupport::diurnal("c" + std::to_string(i), 7, 0.5, 0.1 * i, 0.3 * i);
    cells.push_back(kpi::normalize(s, {0, kpi::temporal_split(s).boundary}).series);
  }
  const auto avg = kpi::average_series(cells, "avg");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    untrained.seed = seed;
    audit(forecast::evaluate_cells(forecast::train_cluster_model(avg, untrained), cells));
  }
  o.note(fmt("%zu cell evaluations checked, %zu violations", checked, violations));
  if (violations || checked == 0) o.fail("MSE > MAE");
  return o;
}

Outcome model_count() {
  Outcome o;
  for (int per : {2, 4, 7}) {
    const auto dir = testsupport::scratch_dir("acceptance_count_" + std::to_string(per));
    write_scenario(dir, 21, per, 7, 0.02);
    const int n = 3 * per;
    for (int k : {1, 2, 3, 5}) {
      if (k >= n) continue;
      auto doc = scenario_config(21, 0);
      doc["clustering"] = {{"k_override", k}, {"k_max", std::min(10, n)}};
      doc["experiments"] = {{"cold_start", false}};
      const auto run = pipeline::run_pipeline(pipeline::PipelineConfig::from_json(doc, dir));
      int files = 0;
      for (const auto& e : fs::directory_iterator(run.run_dir / "models")) files += e.is_regular_file();
      const auto snap = pipeline::load_run(run.run_dir);
      const bool ok = files == k && static_cast<int>(snap->models.size()) == k;
      o.note(fmt("N=%d k=%d -> %d", n, k, files));
      if (!ok) o.fail(fmt("N=%d k=%d persisted %d models", n, k, files));
    }
  }
  return o;
}

Outcome param_counts() {
  Outcome o;
  const std::pair<const char*, std::int64_t> published[] = {
      {"efficientnet_b0", 5'288'548}, {"resnet50", 25'557'032}, {"vit_b_16", 86'567'656}};
  for (auto [name, expected] : published) {
    const auto got = vision::param_count(vision::describe(name), vision::eurosat_classes);
    o.note(fmt("%s %lld (expected %lld)", name, static_cast<long long>(got),
               static_cast<long long>(expected)));
    if (got != expected) o.fail(std::string(name) + " mismatch");
  }
  return o;
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"window_count", 1.0, window_count},
      {"geometry_oracle", 5.0, geometry_oracle},
      {"clustering_oracle", 30.0, clustering_oracle},
      {"end_to_end", 600.0, end_to_end},
      {"metric_inequality", 600.0, metric_inequality},
      {"model_count", 600.0, model_count},
      {"param_counts", 120.0, param_counts},
  };
  return all;
}

bool run_one(const Criterion& c) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = c.run();
  } catch (const std::exception& e) {
    o.fail(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > c.budget_s) o.fail(fmt("took %.1fs, budget %.0fs", secs, c.budget_s));
  std::printf("%s %s (%.2fs) %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  bool ok = true, found = false;
  for (const auto& c : criteria()) {
    if (which != "all" && which != c.name) continue;
    found = true;
    ok = run_one(c) && ok;
  }
  if (!found) {
    std::fprintf(stderr, "unknown criterion '%s'\n", which.c_str());
    return 2;
  }
  return ok ? 0 : 1;
}
