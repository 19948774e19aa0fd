#include "geokpi/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/util.hpp"

namespace geokpi::forecast {

using kpi::horizon_length;
using kpi::history_length;

kpi::KpiSeries training_average(const std::vector<kpi::KpiSeries>& members, const std::string& id,
                                std::vector<std::string>* used, kpi::NormParams* mean_norm) {
  std::vector<kpi::KpiSeries> usable;
  double lo = 0.0, hi = 0.0;
  for (const auto& m : members) {
    if (m.norm && m.norm->degenerate) continue;
    usable.push_back(m);
    if (m.norm) {
      lo += m.norm->min;
      hi += m.norm->max;
    }
    if (used != nullptr) used->push_back(m.cell_id);
  }
  if (usable.empty()) {
    throw Error(ErrorCode::degenerate_series,
                "cluster '" + id + "' has no non-constant member series to train on");
  }
  if (mean_norm != nullptr) {
    const double n = static_cast<double>(usable.size());
    *mean_norm = {lo / n, hi / n, hi == lo};
  }
  return kpi::average_series(usable, id);
}

ForecastModel train_cluster_model(const kpi::KpiSeries& average, const TrainingConfig& config,
                                  int cluster) {
  const auto split = kpi::temporal_split(average);
  const auto& train = split.train.values;
  const auto [lo, hi] = std::minmax_element(train.begin(), train.end());
  if (*lo == *hi) {
    throw Error(ErrorCode::degenerate_series,
                "average series of cluster " + std::to_string(cluster) +
                    " is constant; constant series are evaluated but never trained on");
  }
  ForecastModel model;
  model.cluster = cluster;
  model.config = config;
  model.network = LstmNetwork(config.hidden_size, config.layers, config.seed);
  model.loss_history = train_network(model.network, kpi::make_windows(train), config);
  model.seed_history.assign(train.end() - history_length, train.end());
  if (average.norm) model.cluster_norm = *average.norm;
  return model;
}

std::vector<double> predict(const ForecastModel& model, std::span<const double> history) {
  if (history.size() != static_cast<std::size_t>(history_length)) {
    throw Error(ErrorCode::shape, "history must hold " + std::to_string(history_length) +
                                      " values, got " + std::to_string(history.size()));
  }
  LstmNetwork::Matrix x(history_length, 1);
  for (int t = 0; t < history_length; ++t) {
    if (!std::isfinite(history[t])) throw Error(ErrorCode::shape, "history has non-finite values");
    x(t, 0) = static_cast<float>(history[t]);
  }
  const auto y = model.network.forward(x);
  std::vector<double> out(horizon_length);
  for (int t = 0; t < horizon_length; ++t) {
    out[t] = std::clamp(static_cast<double>(y(t, 0)), kpi::clamp_low, kpi::clamp_high);
  }
  return out;
}

std::vector<double> predict_windows(const ForecastModel& model, const kpi::WindowSet& windows) {
  constexpr std::size_t chunk = 256;
  std::vector<double> out(windows.size() * horizon_length);
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const std::size_t end = std::min(windows.size(), start + chunk);
    LstmNetwork::Matrix x(history_length, static_cast<Eigen::Index>(end - start));
    for (std::size_t j = start; j < end; ++j) {
      for (int t = 0; t < history_length; ++t) {
        x(t, static_cast<Eigen::Index>(j - start)) = static_cast<float>(windows.input(j)[t]);
      }
    }
    const auto y = model.network.forward(x);
    for (std::size_t j = start; j < end; ++j) {
      for (int t = 0; t < horizon_length; ++t) {
        out[j * horizon_length + t] = std::clamp(
            static_cast<double>(y(t, static_cast<Eigen::Index>(j - start))), kpi::clamp_low,
            kpi::clamp_high);
      }
    }
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

namespace {

kpi::WindowSet test_windows(const kpi::KpiSeries& cell) {
  const auto split = kpi::temporal_split(cell);
  if (split.test.size() < static_cast<std::size_t>(kpi::window_length)) {
    throw Error(ErrorCode::too_short, "test segment of '" + cell.cell_id + "' holds " +
                                          std::to_string(split.test.size()) +
                                          " samples, fewer than one window");
  }
  return kpi::make_windows(split.test.values, split.boundary);
}

ClusterSummary summarize(int cluster, const std::vector<const CellMetrics*>& cells) {
  std::vector<double> mse, mae, pmse;
  for (const auto* c : cells) {
    mse.push_back(c->mse);
    mae.push_back(c->mae);
    pmse.push_back(c->persistence_mse);
  }
  return {cluster, cells.size(), mean_std(mse), mean_std(mae), mean_std(pmse)};
}

}  // namespace

CellMetrics persistence_metrics(const kpi::KpiSeries& cell) {
  const auto w = test_windows(cell);
  CellMetrics m;
  m.cell_id = cell.cell_id;
  m.windows = w.size();
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double last = w.input(i)[history_length - 1];
    for (int t = 0; t < horizon_length; ++t) {
      const double e = last - w.target(i)[t];
      se += e * e;
      ae += std::abs(e);
    }
  }
  const double n = static_cast<double>(w.size() * horizon_length);
  m.persistence_mse = m.mse = se / n;
  m.persistence_mae = m.mae = ae / n;
  return m;
}

MetricsReport evaluate_cells(const ForecastModel& model, const std::vector<kpi::KpiSeries>& cells,
                             const std::string& experiment) {
  if (cells.empty()) throw Error(ErrorCode::validation, "no cells to evaluate");
  MetricsReport report;
  report.experiment = experiment;
  for (const auto& cell : cells) {
    const auto w = test_windows(cell);
    const auto pred = predict_windows(model, w);
    const double scale = cell.norm && !cell.norm->degenerate ? cell.norm->max - cell.norm->min : 0.0;
    CellMetrics m;
    m.cluster = model.cluster;
    m.cell_id = cell.cell_id;
    m.windows = w.size();
    double se = 0.0, ae = 0.0, pse = 0.0, pae = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double last = w.input(i)[history_length - 1];
      for (int t = 0; t < horizon_length; ++t) {
        const double target = w.target(i)[t];
        const double e = pred[i * horizon_length + t] - target;
        se += e * e;
        ae += std::abs(e);
        m.max_abs_error = std::max(m.max_abs_error, std::abs(e));
        pse += (last - target) * (last - target);
        pae += std::abs(last - target);
      }
    }
    const double n = static_cast<double>(w.size() * horizon_length);
    m.mse = se / n;
    m.mae = ae / n;
    m.persistence_mse = pse / n;
    m.persistence_mae = pae / n;
    m.denorm_mse = m.mse * scale * scale;
    m.denorm_mae = m.mae * scale;
    report.cells.push_back(std::move(m));
  }
  return report;
}

std::map<int, ClusterSummary> MetricsReport::cluster_summaries() const {
  std::map<int, std::vector<const CellMetrics*>> by_cluster;
  for (const auto& c : cells) by_cluster[c.cluster].push_back(&c);
  std::map<int, ClusterSummary> out;
  for (const auto& [k, members] : by_cluster) out[k] = summarize(k, members);
  return out;
}

ClusterSummary MetricsReport::overall() const {
  std::vector<const CellMetrics*> all;
  for (const auto& c : cells) all.push_back(&c);
  return summarize(-1, all);
}

void MetricsReport::append(const MetricsReport& other) {
  cells.insert(cells.end(), other.cells.begin(), other.cells.end());
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "cluster,cell_id,mse,mae,persistence_mse,persistence_mae,denorm_mse,denorm_mae,"
         "max_abs_error,windows,experiment\n";
  for (const auto& c : cells) {
    out << c.cluster << ',' << util::csv_escape(c.cell_id) << ',' << c.mse << ',' << c.mae << ','
        << c.persistence_mse << ',' << c.persistence_mae << ',' << c.denorm_mse << ','
        << c.denorm_mae << ',' << c.max_abs_error << ',' << c.windows << ',' << experiment << '\n';
  }
  return out.str();
}

MetricsReport MetricsReport::from_csv(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    const auto f = util::split_csv_line(line);
    if (f.size() != 11) throw Error(ErrorCode::ingestion, "malformed metrics row");
    CellMetrics c;
    c.cluster = std::stoi(f[0]);
    c.cell_id = f[1];
    c.mse = util::parse_double(f[2], "mse");
    c.mae = util::parse_double(f[3], "mae");
    c.persistence_mse = util::parse_double(f[4], "persistence_mse");
    c.persistence_mae = util::parse_double(f[5], "persistence_mae");
    c.denorm_mse = util::parse_double(f[6], "denorm_mse");
    c.denorm_mae = util::parse_double(f[7], "denorm_mae");
    c.max_abs_error = util::parse_double(f[8], "max_abs_error");
    c.windows = static_cast<std::size_t>(std::stoull(f[9]));
    r.experiment = f[10];
    r.cells.push_back(std::move(c));
  }
  return r;
}

ColdStartResult cold_start_experiment(const std::map<int, std::vector<kpi::KpiSeries>>& members,
                                      double mask_fraction, std::uint64_t seed,
                                      const TrainingConfig& config) {
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw Error(ErrorCode::validation, "mask fraction must lie in (0, 1)");
  }
  ColdStartResult result;
  result.report.experiment = "cold-start";
  for (const auto& [cluster, series] : members) {
    const auto m = series.size();
    if (m < static_cast<std::size_t>(min_cold_start_members)) {
      result.skipped.push_back(cluster);
      continue;
    }
    std::vector<const kpi::KpiSeries*> sorted;
    for (const auto& s : series) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->cell_id < b->cell_id; });
    std::mt19937_64 rng(util::derive_seed(seed, "mask/" + std::to_string(cluster)));
    std::shuffle(sorted.begin(), sorted.end(), rng);
    const auto n_mask = static_cast<std::size_t>(
        std::ceil(mask_fraction * static_cast<double>(m) - 1e-9));

    std::vector<kpi::KpiSeries> masked, kept;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      (i < n_mask ? masked : kept).push_back(*sorted[i]);
    }
    std::sort(masked.begin(), masked.end(),
              [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; });
    std::sort(kept.begin(), kept.end(),
              [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; });

    std::vector<std::string> used;
    kpi::NormParams norm;
    auto average = training_average(kept, "cluster_" + std::to_string(cluster), &used, &norm);
    average.norm = norm;
    auto model = train_cluster_model(average, config, cluster);
    model.training_cells = used;
    result.report.append(evaluate_cells(model, masked, "cold-start"));
    for (const auto& s : masked) result.masked[cluster].push_back(s.cell_id);
    result.models.emplace(cluster, std::move(model));
  }
  if (result.models.empty()) {
    throw Error(ErrorCode::nothing_to_evaluate,
                "every cluster has fewer than " + std::to_string(min_cold_start_members) +
                    " members");
  }
  return result;
}

// --- persistence ----------------------------------------------------------------

namespace {

template <typename M>
std::vector<float> flat(const M& m) {
  return {m.data(), m.data() + m.size()};
}

template <typename M>
void unflat(const nlohmann::json& j, M& m) {
  const auto v = j.get<std::vector<float>>();
  if (static_cast<Eigen::Index>(v.size()) != m.size()) {
    throw Error(ErrorCode::shape, "stored parameter block has the wrong size");
  }
  std::copy(v.begin(), v.end(), m.data());
}

}  // namespace

void save_model(const ForecastModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  const auto& c = model.config;
  j["cluster"] = model.cluster;
  j["input_length"] = ForecastModel::input_length;
  j["output_length"] = ForecastModel::output_length;
  j["architecture"] = "lstm_direct_multi_horizon";
  j["config"] = {{"hidden_size", c.hidden_size}, {"layers", c.layers},
                 {"epochs", c.epochs},           {"learning_rate", c.learning_rate},
                 {"lr_decay", c.lr_decay},       {"batch_size", c.batch_size},
                 {"optimizer", c.optimizer},     {"momentum", c.momentum},
                 {"grad_clip", c.grad_clip},
                 {"seed", c.seed}};
  j["loss_history"] = model.loss_history;
  j["training_cells"] = model.training_cells;
  j["seed_history"] = model.seed_history;
  j["cluster_norm"] = {{"min", model.cluster_norm.min},
                       {"max", model.cluster_norm.max},
                       {"degenerate", model.cluster_norm.degenerate}};
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : model.network.layers()) {
    layers.push_back({{"w_ih", flat(l.w_ih)}, {"w_hh", flat(l.w_hh)}, {"bias", flat(l.bias)}});
  }
  j["head"] = {{"weight", flat(model.network.head_weight())},
               {"bias", flat(model.network.head_bias())}};
  util::write_text_atomic(path, j.dump());
}

ForecastModel load_model(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(util::read_text(path));
  ForecastModel m;
  m.cluster = j.at("cluster").get<int>();
  const auto& c = j.at("config");
  m.config.hidden_size = c.at("hidden_size").get<int>();
  m.config.layers = c.at("layers").get<int>();
  m.config.epochs = c.at("epochs").get<int>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.lr_decay = c.at("lr_decay").get<double>();
  m.config.batch_size = c.at("batch_size").get<int>();
  m.config.optimizer = c.at("optimizer").get<std::string>();
  m.config.momentum = c.at("momentum").get<double>();
  m.config.grad_clip = c.at("grad_clip").get<double>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.loss_history = j.at("loss_history").get<std::vector<double>>();
  m.training_cells = j.at("training_cells").get<std::vector<std::string>>();
  m.seed_history = j.at("seed_history").get<std::vector<double>>();
  const auto& n = j.at("cluster_norm");
  m.cluster_norm = {n.at("min").get<double>(), n.at("max").get<double>(),
                    n.at("degenerate").get<bool>()};
  m.network = LstmNetwork(m.config.hidden_size, m.config.layers, m.config.seed);
  const auto& layers = j.at("layers");
  if (layers.size() != m.network.layers().size()) {
    throw Error(ErrorCode::shape, "stored model layer count mismatch");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = m.network.layers()[i];
    unflat(layers[i].at("w_ih"), l.w_ih);
    unflat(layers[i].at("w_hh"), l.w_hh);
    unflat(layers[i].at("bias"), l.bias);
  }
  unflat(j.at("head").at("weight"), m.network.head_weight());
  unflat(j.at("head").at("bias"), m.network.head_bias());
  return m;
}

}  // namespace geokpi::forecast
