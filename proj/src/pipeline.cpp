#include "geokpi/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "geokpi/errors.hpp"
#include "geokpi/kpi.hpp"
#include "geokpi/util.hpp"

namespace geokpi::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::validation, std::string("config field '") + key + "' has the wrong type");
  }
}

std::filesystem::path required_path(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string() || j.at(key).get<std::string>().empty()) {
    throw Error(ErrorCode::validation, std::string("config field '") + key + "' is required");
  }
  return j.at(key).get<std::string>();
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::validation, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) {
      throw Error(ErrorCode::validation, "unknown config field '" + where + "." + k + "'");
    }
  }
}

}  // namespace

fs::path PipelineConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return (base_dir / p).lexically_normal();
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"cells_csv", "raster_manifest", "kpi_csv", "output_dir", "kpi_name", "backbone",
              "width_ratio", "max_fill", "clustering", "training", "experiments", "seed"},
             "config");
  PipelineConfig c;
  c.base_dir = base_dir;
  c.cells_csv = required_path(j, "cells_csv");
  c.raster_manifest = required_path(j, "raster_manifest");
  c.kpi_csv = required_path(j, "kpi_csv");
  c.output_dir = required_path(j, "output_dir");
  c.kpi_name = get_or<std::string>(j, "kpi_name", "");
  if (c.kpi_name.empty()) throw Error(ErrorCode::validation, "config field 'kpi_name' is required");
  c.width_ratio = get_or(j, "width_ratio", c.width_ratio);
  c.max_fill = get_or(j, "max_fill", c.max_fill);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);

  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    if (b.is_string()) {
      c.backbone = b.get<std::string>();
    } else {
      check_keys(b, {"name", "weights"}, "backbone");
      c.backbone = get_or<std::string>(b, "name", c.backbone);
      c.backbone_weights = get_or<std::string>(b, "weights", "");
    }
  }
  if (j.contains("clustering")) {
    const auto& k = j.at("clustering");
    check_keys(k, {"k_min", "k_max", "k_override", "restarts", "tolerance", "max_iterations"},
               "clustering");
    c.clustering.k_min = get_or(k, "k_min", c.clustering.k_min);
    c.clustering.k_max = get_or(k, "k_max", c.clustering.k_max);
    if (k.contains("k_override") && !k.at("k_override").is_null()) {
      c.clustering.k_override = get_or(k, "k_override", 0);
    }
    c.clustering.kmeans.restarts = get_or(k, "restarts", c.clustering.kmeans.restarts);
    c.clustering.kmeans.tolerance = get_or(k, "tolerance", c.clustering.kmeans.tolerance);
    c.clustering.kmeans.max_iterations =
        get_or(k, "max_iterations", c.clustering.kmeans.max_iterations);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t,
               {"hidden_size", "layers", "epochs", "learning_rate", "lr_decay", "batch_size",
                "optimizer", "momentum", "grad_clip", "seed"},
               "training");
    auto& tc = c.training;
    tc.hidden_size = get_or(t, "hidden_size", tc.hidden_size);
    tc.layers = get_or(t, "layers", tc.layers);
    tc.epochs = get_or(t, "epochs", tc.epochs);
    tc.learning_rate = get_or(t, "learning_rate", tc.learning_rate);
    tc.lr_decay = get_or(t, "lr_decay", tc.lr_decay);
    tc.batch_size = get_or(t, "batch_size", tc.batch_size);
    tc.optimizer = get_or(t, "optimizer", tc.optimizer);
    tc.momentum = get_or(t, "momentum", tc.momentum);
    tc.grad_clip = get_or(t, "grad_clip", tc.grad_clip);
    tc.seed = get_or<std::uint64_t>(t, "seed", tc.seed);
  }
  if (j.contains("experiments")) {
    const auto& e = j.at("experiments");
    check_keys(e, {"cold_start", "mask_fraction"}, "experiments");
    c.cold_start = get_or(e, "cold_start", c.cold_start);
    c.mask_fraction = get_or(e, "mask_fraction", c.mask_fraction);
  }

  if (!(c.width_ratio > 0.0 && c.width_ratio <= 2.0)) {
    throw Error(ErrorCode::validation, "width_ratio must lie in (0, 2]");
  }
  if (c.max_fill < 0) throw Error(ErrorCode::validation, "max_fill must be >= 0");
  if (c.clustering.k_min < 1 || c.clustering.k_max < c.clustering.k_min) {
    throw Error(ErrorCode::validation, "clustering k range must satisfy 1 <= k_min <= k_max");
  }
  if (c.clustering.k_override && *c.clustering.k_override < 1) {
    throw Error(ErrorCode::validation, "k_override must be >= 1");
  }
  const auto& tc = c.training;
  if (tc.hidden_size < 1 || tc.layers < 1 || tc.epochs < 0 || tc.batch_size < 1 ||
      !(tc.learning_rate > 0.0) || !(tc.lr_decay > 0.0 && tc.lr_decay <= 1.0)) {
    throw Error(ErrorCode::validation, "training config out of range");
  }
  if (tc.optimizer != "sgd" && tc.optimizer != "adam") {
    throw Error(ErrorCode::validation, "training.optimizer must be 'sgd' or 'adam'");
  }
  if (!(c.mask_fraction > 0.0 && c.mask_fraction < 1.0)) {
    throw Error(ErrorCode::validation, "experiments.mask_fraction must lie in (0, 1)");
  }
  vision::make_backbone(c.backbone);  // registry check
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(util::read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::validation, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
  const auto& tc = training;
  json k = {{"k_min", clustering.k_min},
            {"k_max", clustering.k_max},
            {"k_override", nullptr},
            {"restarts", clustering.kmeans.restarts},
            {"tolerance", clustering.kmeans.tolerance},
            {"max_iterations", clustering.kmeans.max_iterations}};
  if (clustering.k_override) k["k_override"] = *clustering.k_override;
  return {
      {"cells_csv", resolve(cells_csv).string()},
      {"raster_manifest", resolve(raster_manifest).string()},
      {"kpi_csv", resolve(kpi_csv).string()},
      {"output_dir", resolve(output_dir).string()},
      {"kpi_name", kpi_name},
      {"backbone",
       {{"name", backbone},
        {"weights", backbone_weights.empty() ? "" : resolve(backbone_weights).string()}}},
      {"width_ratio", width_ratio},
      {"max_fill", max_fill},
      {"clustering", k},
      {"training",
       {{"hidden_size", tc.hidden_size},
        {"layers", tc.layers},
        {"epochs", tc.epochs},
        {"learning_rate", tc.learning_rate},
        {"lr_decay", tc.lr_decay},
        {"batch_size", tc.batch_size},
        {"optimizer", tc.optimizer},
        {"momentum", tc.momentum},
        {"grad_clip", tc.grad_clip},
        {"seed", tc.seed}}},
      {"experiments", {{"cold_start", cold_start}, {"mask_fraction", mask_fraction}}},
      {"seed", seed},
  };
}

std::string config_hash(const PipelineConfig& config) {
  return util::sha256_hex(config.to_json().dump());
}

json PipelineRun::manifest() const {
  json stages_j = json::array();
  for (const auto& s : stages) {
    stages_j.push_back(
        {{"name", s.name}, {"status", s.status}, {"message", s.message}, {"seconds", s.seconds}});
  }
  return {{"run_id", run_id},     {"config_hash", config_hash}, {"config", config},
          {"seed", seed},         {"stages", stages_j},         {"artifacts", artifacts},
          {"inputs_read", inputs_read}, {"completed", completed}};
}

PipelineRun PipelineRun::from_manifest(const json& j, const fs::path& run_dir) {
  PipelineRun r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.config = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.run_dir = run_dir;
  for (const auto& s : j.at("stages")) {
    r.stages.push_back({s.at("name").get<std::string>(), s.at("status").get<std::string>(),
                        s.at("message").get<std::string>(), s.at("seconds").get<double>()});
  }
  r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  r.inputs_read = j.at("inputs_read").get<std::vector<std::string>>();
  r.completed = j.at("completed").get<bool>();
  return r;
}

bool verify_artifacts(const PipelineRun& run) {
  for (const auto& [rel, sum] : run.artifacts) {
    const auto p = run.run_dir / rel;
    if (!fs::exists(p) || util::sha256_file(p) != sum) return false;
  }
  return true;
}

// --- run ----------------------------------------------------------------------

namespace {

/// Exclusive marker file; removed on destruction.
class RunLock {
public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw Error(ErrorCode::locked, "run is locked by " + path_.string() +
                                         " (another run in progress, or remove a stale lock)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  fs::path path_;
};

std::string embeddings_csv(const std::vector<vision::Embedding>& embeddings) {
  std::ostringstream out;
  out.precision(17);
  out << "cell_id";
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().vector.size();
  for (std::size_t d = 0; d < dim; ++d) out << ",e" << d;
  out << '\n';
  for (const auto& e : embeddings) {
    out << util::csv_escape(e.cell_id);
    for (double v : e.vector) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string norm_params_csv(const std::vector<kpi::KpiSeries>& series,
                            const std::map<std::string, std::size_t>& clamped) {
  std::ostringstream out;
  out.precision(17);
  out << "cell_id,min,max,degenerate,clamped\n";
  for (const auto& s : series) {
    out << util::csv_escape(s.cell_id) << ',' << s.norm->min << ',' << s.norm->max << ','
        << (s.norm->degenerate ? 1 : 0) << ',' << clamped.at(s.cell_id) << '\n';
  }
  return out.str();
}

json summary_json(const forecast::MetricsReport& r) {
  auto ms = [](const forecast::MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  auto row = [&](const forecast::ClusterSummary& s) {
    return json{{"cells", s.cells},
                {"mse", ms(s.mse)},
                {"mae", ms(s.mae)},
                {"persistence_mse", ms(s.persistence_mse)}};
  };
  json clusters = json::object();
  for (const auto& [k, s] : r.cluster_summaries()) clusters[std::to_string(k)] = row(s);
  return {{"experiment", r.experiment}, {"clusters", clusters}, {"overall", row(r.overall())}};
}

}  // namespace

PipelineRun run_pipeline(const PipelineConfig& config) {
  const auto hash = config_hash(config);
  PipelineRun run;
  run.config_hash = hash;
  run.run_id = hash.substr(0, 16);
  run.config = config.to_json();
  run.config["base_dir"] = config.base_dir.string();
  run.seed = config.seed;
  const auto output_dir = config.resolve(config.output_dir);
  const auto runs_dir = output_dir / "runs";
  run.run_dir = runs_dir / run.run_id;
  for (const auto& name : stage_names()) run.stages.push_back(StageStatus{name, "pending", "", 0.0});

  fs::create_directories(runs_dir);
  RunLock lock(runs_dir / (run.run_id + ".lock"));
  // Idempotent per config: a rerun starts from an empty directory.
  fs::remove_all(run.run_dir);
  fs::create_directories(run.run_dir);

  const json provenance = {{"run_id", run.run_id}, {"config_hash", hash}};
  auto write_manifest = [&] {
    util::write_text_atomic(run.run_dir / "manifest.json", run.manifest().dump(2));
  };
  auto record = [&](const fs::path& rel) {
    run.artifacts[rel.generic_string()] = util::sha256_file(run.run_dir / rel);
  };
  auto input = [&](const fs::path& p) {
    if (!fs::exists(p)) throw Error(ErrorCode::io, "input not found: " + p.string());
    const auto s = p.string();
    if (std::find(run.inputs_read.begin(), run.inputs_read.end(), s) == run.inputs_read.end()) {
      run.inputs_read.push_back(s);
    }
    return p;
  };
  auto stage = [&](std::size_t index, const auto& body) {
    auto& st = run.stages[index];
    st.status = "running";
    write_manifest();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const Error& e) {
      st.status = "failed";
      st.message = std::string(to_string(e.code())) + ": " + e.what();
      write_manifest();
      throw StageError(st.name, e.code(), e.what());
    } catch (const std::exception& e) {
      st.status = "failed";
      st.message = e.what();
      write_manifest();
      throw StageError(st.name, ErrorCode::io, e.what());
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.status = "completed";
    write_manifest();
  };

  std::vector<geometry::CellConfig> cells;
  std::vector<geometry::CoverageBox> boxes;
  std::vector<raster::ImagePatch> patches;
  std::vector<vision::Embedding> embeddings;
  profiling::ClusterModel clusters;
  std::map<int, std::vector<kpi::KpiSeries>> members;
  std::map<int, forecast::ForecastModel> models;

  stage(0, [&] {
    // Every input is checked up front so a bad path fails the first stage.
    input(config.resolve(config.cells_csv));
    if (!fs::exists(config.resolve(config.raster_manifest))) {
      throw Error(ErrorCode::io,
                  "raster manifest not found: " + config.resolve(config.raster_manifest).string());
    }
    if (!fs::exists(config.resolve(config.kpi_csv))) {
      throw Error(ErrorCode::io, "KPI file not found: " + config.resolve(config.kpi_csv).string());
    }
    cells = geometry::read_cells_csv(config.resolve(config.cells_csv));
    std::set<std::string> ids;
    std::ostringstream out;
    out.precision(17);
    out << "cell_id,lat_min,lat_max,lon_min,lon_max";
    for (int i = 0; i < 4; ++i) out << ",corner" << i << "_lat,corner" << i << "_lon";
    out << '\n';
    for (const auto& c : cells) {
      if (!ids.insert(c.cell_id).second) {
        throw Error(ErrorCode::validation, "duplicate cell_id '" + c.cell_id + "'");
      }
      boxes.push_back(geometry::sector_box(c, config.width_ratio));
      const auto& b = boxes.back().bbox;
      out << util::csv_escape(c.cell_id) << ',' << b.lat_min << ',' << b.lat_max << ','
          << b.lon_min << ',' << b.lon_max;
      for (const auto& p : boxes.back().corners) out << ',' << p.lat << ',' << p.lon;
      out << '\n';
    }
    fs::create_directories(run.run_dir / "geometry");
    util::write_text_atomic(run.run_dir / "geometry" / "coverage.csv", out.str());
    record("geometry/coverage.csv");
  });

  stage(1, [&] {
    const auto manifest = input(config.resolve(config.raster_manifest));
    const auto store = raster::RasterStore::load(manifest);
    for (const auto& row : util::read_csv(manifest).rows) {
      input((manifest.parent_path() / row.at(0)).lexically_normal());
    }
    fs::create_directories(run.run_dir / "patches");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      patches.push_back(store.extract(boxes[i], cells[i].cell_id));
      const auto rel = fs::path("patches") / (cells[i].cell_id + ".ppm");
      raster::write_ppm(run.run_dir / rel, raster::patch_size, raster::patch_size,
                        patches.back().pixels);
      record(rel);
    }
  });

  stage(2, [&] {
    vision::BackboneSpec spec{config.backbone, 0, 0, {}};
    if (!config.backbone_weights.empty()) {
      spec.weights_ref = input(config.resolve(config.backbone_weights)).string();
    }
    const auto backbone = vision::load_backbone(spec);
    for (const auto& p : patches) embeddings.push_back(vision::embed(p, *backbone));
    util::write_text_atomic(run.run_dir / "embeddings.csv", embeddings_csv(embeddings));
    record("embeddings.csv");
  });

  stage(3, [&] {
    clusters = profiling::fit_clusters(embeddings, util::derive_seed(config.seed, "clustering"),
                                       config.clustering);
    profiling::save(clusters, run.run_dir / "clustering");
    for (const auto& f : fs::directory_iterator(run.run_dir / "clustering")) {
      record(fs::path("clustering") / f.path().filename());
    }
  });

  stage(4, [&] {
    const auto ingest = kpi::read_kpi_csv(input(config.resolve(config.kpi_csv)), config.kpi_name,
                                          config.max_fill);
    std::vector<kpi::KpiSeries> normalized;
    std::map<std::string, std::size_t> clamped;
    for (const auto& c : cells) {
      const auto it = ingest.series.find(c.cell_id);
      if (it == ingest.series.end()) {
        throw Error(ErrorCode::ingestion, "no '" + config.kpi_name + "' series for cell '" +
                                              c.cell_id + "'");
      }
      if (!it->second.same_grid(ingest.series.begin()->second)) {
        throw Error(ErrorCode::alignment,
                    "series of '" + c.cell_id + "' is not on the common time grid");
      }
      const auto split = kpi::temporal_split(it->second);
      auto norm = kpi::normalize(it->second, {0, split.boundary});
      clamped[c.cell_id] = norm.clamp_count;
      members[clusters.membership.at(c.cell_id)].push_back(norm.series);
      normalized.push_back(std::move(norm.series));
    }
    fs::create_directories(run.run_dir / "kpi");
    kpi::write_kpi_csv(run.run_dir / "kpi" / "normalized.csv", config.kpi_name, normalized);
    util::write_text_atomic(run.run_dir / "kpi" / "norm_params.csv",
                            norm_params_csv(normalized, clamped));
    record("kpi/normalized.csv");
    record("kpi/norm_params.csv");

    fs::create_directories(run.run_dir / "models");
    std::vector<kpi::KpiSeries> averages;
    for (int k = 0; k < clusters.k; ++k) {
      std::vector<std::string> used;
      kpi::NormParams norm;
      auto avg = forecast::training_average(members.at(k), "cluster_" + std::to_string(k), &used,
                                            &norm);
      avg.norm = norm;
      auto model = forecast::train_cluster_model(avg, config.training, k);
      model.training_cells = used;
      const auto rel = fs::path("models") / ("cluster_" + std::to_string(k) + ".json");
      forecast::save_model(model, run.run_dir / rel);
      // Stamp provenance into the model document.
      auto doc = json::parse(util::read_text(run.run_dir / rel));
      doc["provenance"] = provenance;
      util::write_text_atomic(run.run_dir / rel, doc.dump());
      record(rel);
      models.emplace(k, std::move(model));
      averages.push_back(std::move(avg));
    }
    kpi::write_kpi_csv(run.run_dir / "kpi" / "cluster_average.csv", config.kpi_name, averages);
    record("kpi/cluster_average.csv");
  });

  stage(5, [&] {
    forecast::MetricsReport exp1;
    exp1.experiment = "per-cluster";
    for (const auto& [k, model] : models) {
      exp1.append(forecast::evaluate_cells(model, members.at(k), "per-cluster"));
    }
    fs::create_directories(run.run_dir / "metrics");
    util::write_text_atomic(run.run_dir / "metrics" / "experiment1.csv", exp1.to_csv());
    record("metrics/experiment1.csv");
    json summary = {{"provenance", provenance}, {"experiment1", summary_json(exp1)}};

    if (config.cold_start) {
      try {
        const auto cs = forecast::cold_start_experiment(
            members, config.mask_fraction, util::derive_seed(config.seed, "cold-start"),
            config.training);
        util::write_text_atomic(run.run_dir / "metrics" / "experiment2.csv", cs.report.to_csv());
        record("metrics/experiment2.csv");
        json masked = json::object(), trained = json::object();
        for (const auto& [k, ids] : cs.masked) masked[std::to_string(k)] = ids;
        for (const auto& [k, m] : cs.models) trained[std::to_string(k)] = m.training_cells;
        summary["experiment2"] = summary_json(cs.report);
        summary["experiment2"]["masked_cells"] = masked;
        summary["experiment2"]["training_cells"] = trained;
        summary["experiment2"]["skipped_clusters"] = cs.skipped;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::nothing_to_evaluate) throw;
        summary["experiment2"] = {{"skipped", e.what()}};
      }
    }
    util::write_text_atomic(run.run_dir / "metrics" / "summary.json", summary.dump(2));
    record("metrics/summary.json");
  });

  run.completed = true;
  write_manifest();
  util::write_text_atomic(output_dir / "current", run.run_id + "\n");
  return run;
}

// --- serving ----------------------------------------------------------------

std::shared_ptr<const RunSnapshot> load_run(const fs::path& run_dir) {
  const auto manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::not_ready, "no run manifest in " + run_dir.string());
  }
  auto snap = std::make_shared<RunSnapshot>();
  snap->run = PipelineRun::from_manifest(json::parse(util::read_text(manifest_path)), run_dir);
  if (!snap->run.completed) {
    throw Error(ErrorCode::not_ready, "run " + snap->run.run_id + " has not completed");
  }
  auto cfg_doc = snap->run.config;
  const fs::path base = cfg_doc.at("base_dir").get<std::string>();
  cfg_doc.erase("base_dir");
  snap->config = PipelineConfig::from_json(cfg_doc, base);
  snap->clusters = profiling::load(run_dir / "clustering");
  for (int k = 0; k < snap->clusters.k; ++k) {
    snap->models.emplace(
        k, forecast::load_model(run_dir / "models" / ("cluster_" + std::to_string(k) + ".json")));
  }
  vision::BackboneSpec spec{snap->config.backbone, 0, 0, {}};
  if (!snap->config.backbone_weights.empty()) {
    spec.weights_ref = snap->config.resolve(snap->config.backbone_weights).string();
  }
  snap->backbone = vision::load_backbone(spec);
  snap->rasters = raster::RasterStore::load(snap->config.resolve(snap->config.raster_manifest));
  snap->experiment1 =
      forecast::MetricsReport::from_csv(util::read_text(run_dir / "metrics" / "experiment1.csv"));
  if (fs::exists(run_dir / "metrics" / "experiment2.csv")) {
    snap->experiment2 =
        forecast::MetricsReport::from_csv(util::read_text(run_dir / "metrics" / "experiment2.csv"));
  }

  auto ingest = kpi::read_kpi_csv(run_dir / "kpi" / "normalized.csv", snap->config.kpi_name, 0);
  const auto params = util::read_csv(run_dir / "kpi" / "norm_params.csv");
  const auto id = params.column("cell_id");
  for (const auto& row : params.rows) {
    auto& s = ingest.series.at(row[id]);
    s.norm = kpi::NormParams{util::parse_double(row[params.column("min")], "min"),
                             util::parse_double(row[params.column("max")], "max"),
                             row[params.column("degenerate")] == "1"};
  }
  snap->normalized = std::move(ingest.series);
  return snap;
}

std::shared_ptr<const RunSnapshot> load_current(const fs::path& output_dir) {
  const auto pointer = output_dir / "current";
  if (!fs::exists(pointer)) {
    throw Error(ErrorCode::not_ready, "no completed run under " + output_dir.string());
  }
  return load_run(output_dir / "runs" / util::trim(util::read_text(pointer)));
}

ClusterMetricsSummary cluster_summary(const RunSnapshot& run, int cluster) {
  ClusterMetricsSummary s;
  const auto counts = run.clusters.member_counts();
  s.member_count = counts.at(static_cast<std::size_t>(cluster));
  const auto summaries = run.experiment1.cluster_summaries();
  if (const auto it = summaries.find(cluster); it != summaries.end()) {
    s.test_mse = it->second.mse;
    s.test_mae = it->second.mae;
  }
  return s;
}

WhatIfResponse what_if(const geometry::CellConfig& candidate, const RunSnapshot* run) {
  if (run == nullptr) throw Error(ErrorCode::not_ready, "no completed run is being served");
  geometry::validate(candidate);
  WhatIfResponse r;
  r.run_id = run->run.run_id;
  r.coverage = geometry::sector_box(candidate, run->config.width_ratio);
  const auto patch = run->rasters.extract(r.coverage, candidate.cell_id);
  const auto e = vision::embed(patch, *run->backbone);
  const auto a = profiling::assign(e.vector, run->clusters);
  r.cluster = a.cluster;
  r.distance = a.distance;
  r.ood_threshold = run->clusters.ood_threshold();
  r.out_of_distribution = a.out_of_distribution;

  const auto& model = run->models.at(a.cluster);
  r.forecast_normalized = forecast::predict(model, model.seed_history);
  for (double v : r.forecast_normalized) {
    r.forecast_denormalized.push_back(model.cluster_norm.invert(v));
  }
  if (!run->normalized.empty()) {
    const auto& any = run->normalized.begin()->second;
    r.forecast_start_epoch_s = any.timestamp(kpi::temporal_split(any).boundary);
  }
  r.cluster_summary = cluster_summary(*run, a.cluster);
  return r;
}

CellForecast cell_forecast(const RunSnapshot& run, const std::string& cell_id, std::size_t window) {
  const auto it = run.normalized.find(cell_id);
  if (it == run.normalized.end()) {
    throw Error(ErrorCode::validation, "unknown cell '" + cell_id + "'");
  }
  const auto& series = it->second;
  const int cluster = run.clusters.membership.at(cell_id);
  const auto split = kpi::temporal_split(series);
  const auto windows = kpi::make_windows(split.test.values, split.boundary);
  if (window >= windows.size()) {
    throw Error(ErrorCode::validation, "window index " + std::to_string(window) +
                                           " beyond the " + std::to_string(windows.size()) +
                                           " test windows");
  }
  CellForecast f;
  f.run_id = run.run.run_id;
  f.cell_id = cell_id;
  f.cluster = cluster;
  f.history.assign(windows.input(window), windows.input(window) + kpi::history_length);
  f.actual.assign(windows.target(window), windows.target(window) + kpi::horizon_length);
  f.forecast = forecast::predict(run.models.at(cluster), f.history);
  const std::size_t first = windows.origin_indices[window] + kpi::history_length;
  for (int t = 0; t < kpi::horizon_length; ++t) {
    f.timestamps.push_back(series.timestamp(first + t));
    f.forecast_denormalized.push_back(series.norm->invert(f.forecast[t]));
    f.actual_denormalized.push_back(series.norm->invert(f.actual[t]));
  }
  return f;
}

}  // namespace geokpi::pipeline
