#include "pengcde/series.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace pengcde {

using nlohmann::json;

std::size_t DynamicGraphSeries::snapshot_index(double t) const {
  if (times.empty()) throw std::logic_error("snapshot_index: empty series");
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  return static_cast<std::size_t>(it - times.begin()) - 1;
}

void DynamicGraphSeries::validate() const {
  if (times.size() != adjacency.size()) {
    throw std::invalid_argument("series: times/adjacency length mismatch");
  }
  if (!features.empty() && features.size() != times.size()) {
    throw std::invalid_argument("series: features length mismatch");
  }
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) {
      throw std::invalid_argument("series: times must be strictly increasing");
    }
  }
  const std::size_t n = num_nodes();
  for (const Tensor& a : adjacency) {
    if (a.rank() != 2 || a.dim(0) != n || a.dim(1) != n) {
      throw std::invalid_argument("series: ragged adjacency shapes");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (a.at(i, i) != 0.0) throw std::invalid_argument("series: nonzero diagonal");
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = a.at(i, j);
        if (v != a.at(j, i)) throw std::invalid_argument("series: asymmetric adjacency");
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("series: non-binary entry");
      }
    }
  }
  // Topology may only switch at a change index.
  std::vector<char> is_change(times.size(), 0);
  for (std::size_t c : change_indices) {
    if (c >= times.size()) throw std::invalid_argument("series: change index out of range");
    is_change[c] = 1;
  }
  for (std::size_t k = 1; k < adjacency.size(); ++k) {
    if (is_change[k]) continue;
    const double* a = adjacency[k].data();
    const double* b = adjacency[k - 1].data();
    for (std::size_t i = 0; i < adjacency[k].size(); ++i) {
      if (a[i] != b[i]) {
        throw std::invalid_argument("series: topology changed at non-change index " +
                                    std::to_string(k));
      }
    }
  }
}

namespace {

json edges_of(const Tensor& a) {
  const std::size_t n = a.dim(0);
  json edges = json::array();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (a.at(i, j) != 0.0) edges.push_back({i, j});
    }
  return edges;
}

Tensor adjacency_from_edges(const json& edges, std::size_t n) {
  Tensor a = Tensor::zeros({n, n});
  for (const auto& e : edges) {
    const std::size_t i = e.at(0).get<std::size_t>();
    const std::size_t j = e.at(1).get<std::size_t>();
    if (i >= n || j >= n || i >= j) {
      throw std::invalid_argument("series json: bad edge pair");
    }
    a.at(i, j) = 1.0;
    a.at(j, i) = 1.0;
  }
  return a;
}

}  // namespace

std::string series_to_json(const DynamicGraphSeries& series) {
  json j;
  j["times"] = series.times;
  j["adjacency"] = json::array();
  for (const Tensor& a : series.adjacency) j["adjacency"].push_back(edges_of(a));
  if (!series.features.empty()) {
    json feats = json::array();
    for (const Tensor& x : series.features) {
      json snap = json::array();
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        json row = json::array();
        for (std::size_t c = 0; c < x.dim(1); ++c) row.push_back(x.at(i, c));
        snap.push_back(std::move(row));
      }
      feats.push_back(std::move(snap));
    }
    j["features"] = std::move(feats);
  }
  j["splits"] = {{"train", series.split.train},
                 {"interp_val", series.split.interp_val},
                 {"extrap_val", series.split.extrap_val}};
  json meta;
  meta["kind"] = series.meta.kind;
  meta["seed"] = series.meta.seed;
  meta["n"] = series.num_nodes();
  meta["change_indices"] = series.change_indices;
  if (!series.meta.task.empty()) meta["task"] = series.meta.task;
  if (!series.meta.params.empty()) meta["params"] = series.meta.params;
  j["meta"] = std::move(meta);
  if (series.label.has_value()) j["labels"] = {*series.label};
  return j.dump();
}

DynamicGraphSeries series_from_json(const std::string& text) {
  const json j = json::parse(text);
  DynamicGraphSeries s;
  s.times = j.at("times").get<std::vector<double>>();
  const json& meta = j.at("meta");
  const std::size_t n = meta.at("n").get<std::size_t>();
  for (const auto& edges : j.at("adjacency")) {
    s.adjacency.push_back(adjacency_from_edges(edges, n));
  }
  if (j.contains("features")) {
    for (const auto& snap : j.at("features")) {
      const std::size_t d = snap.empty() ? 0 : snap.front().size();
      Tensor x = Tensor::zeros({n, d});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) x.at(i, c) = snap.at(i).at(c).get<double>();
      s.features.push_back(std::move(x));
    }
  }
  const json& splits = j.at("splits");
  s.split.train = splits.at("train").get<std::vector<std::size_t>>();
  s.split.interp_val = splits.at("interp_val").get<std::vector<std::size_t>>();
  s.split.extrap_val = splits.at("extrap_val").get<std::vector<std::size_t>>();
  s.change_indices = meta.value("change_indices", std::vector<std::size_t>{});
  s.meta.kind = meta.value("kind", std::string{});
  s.meta.task = meta.value("task", std::string{});
  s.meta.seed = meta.value("seed", std::uint64_t{0});
  if (meta.contains("params")) {
    s.meta.params = meta.at("params").get<std::map<std::string, double>>();
  }
  if (j.contains("labels") && !j.at("labels").empty()) {
    s.label = j.at("labels").front().get<int>();
  }
  s.validate();
  return s;
}

void save_series_json(const DynamicGraphSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_series_json: cannot write " + path);
  out << series_to_json(series);
  if (!out) throw std::runtime_error("save_series_json: write failed for " + path);
}

DynamicGraphSeries load_series_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_series_json: cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return series_from_json(text);
}

}  // namespace pengcde
