#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/pipeline.hpp"
#include "geokpi/raster.hpp"
#include "geokpi/service.hpp"
#include "geokpi/synth.hpp"
#include "geokpi/util.hpp"
#include "geokpi/vision.hpp"

namespace fs = std::filesystem;
using namespace geokpi;

namespace {

std::atomic<service::Server*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

void print_table(const forecast::MetricsReport& report) {
  std::printf("%s\n", report.experiment.c_str());
  std::printf("  %-8s %6s %22s %22s %16s\n", "cluster", "cells", "MSE (mean +- std)",
              "MAE (mean +- std)", "persistence MSE");
  auto row = [](const std::string& label, const forecast::ClusterSummary& s) {
    std::printf("  %-8s %6zu %10.5f +- %8.5f %10.5f +- %8.5f %16.5f\n", label.c_str(), s.cells,
                s.mse.mean, s.mse.std, s.mae.mean, s.mae.std, s.persistence_mse.mean);
  };
  for (const auto& [k, s] : report.cluster_summaries()) row(std::to_string(k), s);
  row("all", report.overall());
}

int cmd_run(const std::string& config_path) {
  const auto config = pipeline::PipelineConfig::load(config_path);
  const auto run = pipeline::run_pipeline(config);
  std::cout << "run " << run.run_id << " completed in " << run.run_dir.string() << "\n";
  for (const auto& s : run.stages) {
    std::printf("  %-11s %-9s %8.2fs\n", s.name.c_str(), s.status.c_str(), s.seconds);
  }
  return 0;
}

int cmd_report(const std::string& output_dir, const std::string& run_dir) {
  const auto snap =
      run_dir.empty() ? pipeline::load_current(output_dir) : pipeline::load_run(run_dir);
  std::cout << "run " << snap->run.run_id << "  k=" << snap->clusters.k
            << "  backbone=" << snap->config.backbone << "\n\n";
  print_table(snap->experiment1);
  if (snap->experiment2) {
    std::cout << "\n";
    print_table(*snap->experiment2);
  }
  return 0;
}

int cmd_serve(const std::string& output_dir, const std::string& host, int port, double poll_s) {
  service::Server server(pipeline::load_current(output_dir));
  if (!server.bind(host, port)) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  // Promote new runs as the `current` pointer moves.
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    auto last = server.snapshot()->run.run_id;
    while (!done) {
      std::this_thread::sleep_for(std::chrono::duration<double>(poll_s));
      try {
        const auto id = util::trim(util::read_text(fs::path(output_dir) / "current"));
        if (id != last) {
          server.promote(pipeline::load_run(fs::path(output_dir) / "runs" / id));
          std::cerr << "serving run " << id << "\n";
          last = id;
        }
      } catch (const std::exception& e) {
        std::cerr << "promotion skipped: " << e.what() << "\n";
      }
    }
  });
  std::cerr << "serving run " << server.snapshot()->run.run_id << " on " << host << ":" << port
            << "\n";
  server.listen();
  done = true;
  watcher.join();
  g_server = nullptr;
  return 0;
}

int cmd_import(const std::string& manifest, const std::string& image, const std::string& gt,
               double resolution, const std::string& season) {
  raster::GeoTransform t;
  std::istringstream in(gt);
  std::string item;
  for (int i = 0; i < 6; ++i) {
    if (!std::getline(in, item, ',')) {
      throw Error(ErrorCode::validation, "--geotransform needs six comma-separated numbers");
    }
    t.c[i] = util::parse_double(item, "geotransform");
  }
  raster::RasterStore::import_image(manifest, image, t, resolution, season);
  std::cout << "imported " << image << " into " << manifest << "\n";
  return 0;
}

int cmd_gen(const std::string& out, std::uint64_t seed, double noise, int cells, int days,
            int epochs) {
  auto spec = synth::default_scenario(seed, noise);
  spec.cells_per_archetype = cells;
  spec.days = days;
  const auto scenario = synth::generate_scenario(spec);
  const auto files = synth::write_scenario(scenario, out);
  const fs::path dir(out);
  nlohmann::json config = {
      {"cells_csv", fs::relative(files.cells_csv, dir).string()},
      {"raster_manifest", fs::relative(files.raster_manifest, dir).string()},
      {"kpi_csv", fs::relative(files.kpi_csv, dir).string()},
      {"output_dir", "runs"},
      {"kpi_name", "prb_utilization"},
      {"backbone", {{"name", "toy"}}},
      {"training", {{"epochs", epochs}}},
      {"seed", seed},
  };
  // The k scan needs at least k_max cells.
  const int n = static_cast<int>(scenario.cells.size());
  if (n < 10) config["clustering"] = {{"k_max", n}};
  util::write_text_atomic(dir / "config.json", config.dump(2) + "\n");
  std::cout << "wrote " << scenario.cells.size() << " cells to " << out
            << " (labels in truth/, config in config.json)\n";
  return 0;
}

int cmd_benchmark(const std::string& data, const std::vector<std::string>& backbones,
                  const std::vector<std::string>& weights, int epochs, std::uint64_t seed,
                  double lr, const std::string& out) {
  const auto dataset = vision::load_image_folder(data);
  std::vector<vision::BackboneSpec> specs;
  for (std::size_t i = 0; i < backbones.size(); ++i) {
    specs.push_back({backbones[i], 0, 0, i < weights.size() ? weights[i] : std::string()});
  }
  vision::TrainingRecipe recipe;
  recipe.learning_rate = lr;
  const auto report = vision::benchmark_backbones(dataset, specs, epochs, seed, recipe);
  for (const auto& r : report.results) {
    std::printf("%-16s params=%lld acc=%.4f precision=%.4f recall=%.4f f1=%.4f\n", r.name.c_str(),
                static_cast<long long>(r.param_count), r.metrics.accuracy, r.metrics.precision,
                r.metrics.recall, r.metrics.f1);
  }
  std::printf("best: %s\n", report.best().name.c_str());
  if (!out.empty()) util::write_text_atomic(out, report.to_json());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geospatial KPI forecasting pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "execute the pipeline for a config file");
  run->add_option("config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);

  std::string output_dir = "runs", run_dir;
  auto* report = app.add_subcommand("report", "print metrics tables of a run");
  report->add_option("--output-dir", output_dir, "directory holding runs/ and current");
  report->add_option("--run-dir", run_dir, "a specific run directory");

  std::string host = "127.0.0.1";
  int port = 8080;
  double poll_s = 2.0;
  auto* serve = app.add_subcommand("serve", "serve the current run over HTTP");
  serve->add_option("--output-dir", output_dir, "directory holding runs/ and current");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--poll", poll_s, "seconds between checks for a newer run");

  std::string manifest, image, gt, season = "spring";
  double resolution = 10.0;
  auto* import = app.add_subcommand("import-rasters", "add a georeferenced image to a raster store");
  import->add_option("--manifest", manifest)->required();
  import->add_option("--image", image)->required()->check(CLI::ExistingFile);
  import->add_option("--geotransform", gt, "gt0,gt1,gt2,gt3,gt4,gt5 (GDAL order)")->required();
  import->add_option("--resolution", resolution, "meters per pixel");
  import->add_option("--season", season);

  std::string out = "scenario";
  std::uint64_t seed = 1;
  double noise = 0.02;
  int cells = 20, days = 30, epochs = 30;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic scenario and its config");
  gen->add_option("--out", out);
  gen->add_option("--seed", seed);
  gen->add_option("--noise", noise);
  gen->add_option("--cells-per-archetype", cells);
  gen->add_option("--days", days);
  gen->add_option("--epochs", epochs, "training epochs written into the config");

  std::string data, bench_out;
  std::vector<std::string> backbones{"toy"}, weights;
  int bench_epochs = 10;
  double lr = 0.5;
  auto* bench = app.add_subcommand("benchmark", "compare backbones on a class-per-folder dataset");
  bench->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
  bench->add_option("--backbone", backbones);
  bench->add_option("--weights", weights, "checkpoint per backbone, same order");
  bench->add_option("--epochs", bench_epochs);
  bench->add_option("--seed", seed);
  bench->add_option("--lr", lr);
  bench->add_option("--out", bench_out, "write the report as JSON");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path);
    if (*report) return cmd_report(output_dir, run_dir);
    if (*serve) return cmd_serve(output_dir, host, port, poll_s);
    if (*import) return cmd_import(manifest, image, gt, resolution, season);
    if (*gen) return cmd_gen(out, seed, noise, cells, days, epochs);
    if (*bench) return cmd_benchmark(data, backbones, weights, bench_epochs, seed, lr, bench_out);
  } catch (const StageError& e) {
    std::cerr << "error [" << to_string(e.cause()) << "] " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "] " << e.what() << "\n";
    return 2;
  }
  return 0;
}
