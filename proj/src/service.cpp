#include "geokpi/service.hpp"

#include <httplib.h>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::service {

using nlohmann::json;

namespace {

json mean_std_json(const forecast::MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

json latlon_json(const geometry::LatLon& p) { return {{"lat", p.lat}, {"lon", p.lon}}; }

json summary_row(const forecast::ClusterSummary& s) {
  return {{"cells", s.cells},
          {"mse", mean_std_json(s.mse)},
          {"mae", mean_std_json(s.mae)},
          {"persistence_mse", mean_std_json(s.persistence_mse)}};
}

json timestamps_json(std::int64_t first, int n) {
  json out = json::array();
  for (int i = 0; i < n; ++i) {
    out.push_back(util::format_iso8601(first + i * kpi::sample_interval_s));
  }
  return out;
}

json error_json(ErrorCode code, const std::string& message) {
  return {{"error", std::string(to_string(code))}, {"message", message}};
}

}  // namespace

json to_json(const pipeline::WhatIfResponse& r) {
  json corners = json::array();
  for (const auto& c : r.coverage.corners) corners.push_back(latlon_json(c));
  const auto& b = r.coverage.bbox;
  return {
      {"run_id", r.run_id},
      {"cluster", r.cluster},
      {"distance", r.distance},
      {"ood_threshold", r.ood_threshold},
      {"out_of_distribution", r.out_of_distribution},
      {"forecast_kind", r.forecast_kind},
      {"forecast_normalized", r.forecast_normalized},
      {"forecast_denormalized", r.forecast_denormalized},
      {"forecast_timestamps",
       timestamps_json(r.forecast_start_epoch_s, static_cast<int>(r.forecast_normalized.size()))},
      {"cluster_summary",
       {{"member_count", r.cluster_summary.member_count},
        {"test_mse", mean_std_json(r.cluster_summary.test_mse)},
        {"test_mae", mean_std_json(r.cluster_summary.test_mae)}}},
      {"coverage",
       {{"corners", corners},
        {"apex", latlon_json(r.coverage.apex)},
        {"bbox",
         {{"lat_min", b.lat_min}, {"lat_max", b.lat_max}, {"lon_min", b.lon_min},
          {"lon_max", b.lon_max}}}}},
  };
}

json to_json(const pipeline::CellForecast& f) {
  json ts = json::array();
  for (auto t : f.timestamps) ts.push_back(util::format_iso8601(t));
  return {{"run_id", f.run_id},
          {"cell_id", f.cell_id},
          {"cluster", f.cluster},
          {"timestamps", ts},
          {"history", f.history},
          {"forecast", f.forecast},
          {"actual", f.actual},
          {"forecast_denormalized", f.forecast_denormalized},
          {"actual_denormalized", f.actual_denormalized}};
}

json run_json(const pipeline::RunSnapshot& run) {
  json j = run.run.manifest();
  j.erase("artifacts");
  j["k"] = run.clusters.k;
  j["artifact_count"] = run.run.artifacts.size();
  return j;
}

json clusters_json(const pipeline::RunSnapshot& run) {
  const auto counts = run.clusters.member_counts();
  const auto exp1 = run.experiment1.cluster_summaries();
  std::map<int, forecast::ClusterSummary> exp2;
  if (run.experiment2) exp2 = run.experiment2->cluster_summaries();
  json list = json::array();
  for (int k = 0; k < run.clusters.k; ++k) {
    std::vector<double> centroid(run.clusters.centroids.cols());
    for (Eigen::Index d = 0; d < run.clusters.centroids.cols(); ++d) {
      centroid[d] = run.clusters.centroids(k, d);
    }
    json c = {{"cluster", k},
              {"member_count", counts[k]},
              {"centroid", centroid},
              {"training_cells", run.models.at(k).training_cells}};
    if (const auto it = exp1.find(k); it != exp1.end()) c["experiment1"] = summary_row(it->second);
    if (const auto it = exp2.find(k); it != exp2.end()) c["experiment2"] = summary_row(it->second);
    list.push_back(std::move(c));
  }
  return {{"run_id", run.run.run_id},
          {"k", run.clusters.k},
          {"backbone", run.clusters.backbone_name},
          {"ood_threshold", run.clusters.ood_threshold()},
          {"clusters", list}};
}

geometry::CellConfig candidate_from_json(const json& body) {
  const json& j = body.contains("candidate") ? body.at("candidate") : body;
  if (!j.is_object()) throw Error(ErrorCode::validation, "candidate must be an object");
  auto number = [&](const char* key, std::optional<double> fallback = std::nullopt) {
    if (!j.contains(key)) {
      if (fallback) return *fallback;
      throw Error(ErrorCode::validation, std::string("candidate field '") + key + "' is required");
    }
    if (!j.at(key).is_number()) {
      throw Error(ErrorCode::validation, std::string("candidate field '") + key + "' must be a number");
    }
    return j.at(key).get<double>();
  };
  geometry::CellConfig c;
  c.cell_id = j.value("cell_id", std::string("candidate"));
  c.latitude = number("latitude");
  c.longitude = number("longitude");
  c.azimuth = number("azimuth");
  c.tilt = number("tilt", 0.0);
  c.range_m = number("range_m");
  return c;
}

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::not_ready:
      return 503;
    case ErrorCode::out_of_extent:
    case ErrorCode::insufficient_coverage:
    case ErrorCode::degenerate_geometry:
    case ErrorCode::polar_unsupported:
      return 422;
    case ErrorCode::validation:
    case ErrorCode::shape:
      return 400;
    default:
      return 500;
  }
}

struct Server::Impl {
  httplib::Server http;
};

Server::Server(std::shared_ptr<const pipeline::RunSnapshot> snapshot)
    : impl_(std::make_unique<Impl>()), snapshot_(std::move(snapshot)) {
  auto& http = impl_->http;

  auto reply = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  // Each handler pins the snapshot it started with.
  auto guarded = [this, reply](auto body) {
    return [this, reply, body](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto snap = this->snapshot();
        if (!snap) throw Error(ErrorCode::not_ready, "no completed run is being served");
        reply(res, 200, body(req, *snap));
      } catch (const Error& e) {
        reply(res, http_status(e.code()), error_json(e.code(), e.what()));
      } catch (const json::exception& e) {
        reply(res, 400, error_json(ErrorCode::validation, e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_json(ErrorCode::io, e.what()));
      }
    };
  };

  http.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) {
    const auto snap = this->snapshot();
    reply(res, 200,
          json{{"status", "ok"}, {"run_id", snap ? json(snap->run.run_id) : json(nullptr)}});
  });
  http.Get("/runs/current", guarded([](const httplib::Request&, const pipeline::RunSnapshot& s) {
             return run_json(s);
           }));
  http.Get("/clusters", guarded([](const httplib::Request&, const pipeline::RunSnapshot& s) {
             return clusters_json(s);
           }));
  http.Get(R"(/cells/([^/]+)/forecast)",
           guarded([](const httplib::Request& req, const pipeline::RunSnapshot& s) {
             std::size_t window = 0;
             if (req.has_param("window")) window = std::stoul(req.get_param_value("window"));
             return to_json(pipeline::cell_forecast(s, req.matches[1].str(), window));
           }));
  http.Post("/what-if", guarded([](const httplib::Request& req, const pipeline::RunSnapshot& s) {
              const auto candidate = candidate_from_json(json::parse(req.body));
              return to_json(pipeline::what_if(candidate, &s));
            }));
}

Server::~Server() { stop(); }

void Server::promote(std::shared_ptr<const pipeline::RunSnapshot> snapshot) {
  std::lock_guard lock(mutex_);
  snapshot_ = std::move(snapshot);
}

std::shared_ptr<const pipeline::RunSnapshot> Server::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

int Server::bind_any(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool Server::bind(const std::string& host, int port) { return impl_->http.bind_to_port(host, port); }

bool Server::listen() { return impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace geokpi::service
