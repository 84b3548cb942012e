#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pengcde/tensor.hpp"

namespace pengcde {

/// Index sets partitioning the snapshots of one series. The extrapolation
/// block is always the final run of indices.
struct SeriesSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> interp_val;
  std::vector<std::size_t> extrap_val;
};

/// Irregularly sampled dynamic graph: strictly increasing timestamps, one
/// symmetric 0/1 adjacency per timestamp (piecewise constant, switching only
/// at change indices), and optional node features.
struct DynamicGraphSeries {
  std::vector<double> times;
  std::vector<Tensor> adjacency;          // n x n each
  std::vector<Tensor> features;           // n x d_x each; empty if absent
  std::vector<std::size_t> change_indices;
  SeriesSplit split;
  std::optional<int> label;               // classification tasks only

  struct Meta {
    std::string kind;      // generator name
    std::string task;      // dynamics name, if features were simulated
    std::uint64_t seed = 0;
    std::map<std::string, double> params;
  } meta;

  std::size_t num_nodes() const { return adjacency.empty() ? 0 : adjacency.front().dim(0); }
  std::size_t num_times() const { return times.size(); }
  std::size_t feature_dim() const { return features.empty() ? 0 : features.front().dim(1); }

  /// Index of the most recent snapshot at time t (left-continuous lookup).
  std::size_t snapshot_index(double t) const;

  void validate() const;
};

/// JSON dataset format: `times`, `adjacency` (per-snapshot [i, j] edge pairs
/// with i < j, each undirected edge stored once), optional `features`
/// (per-snapshot n x d_x row arrays), `splits`, `meta`, and `labels` for
/// classification series.
void save_series_json(const DynamicGraphSeries& series, const std::string& path);
DynamicGraphSeries load_series_json(const std::string& path);

std::string series_to_json(const DynamicGraphSeries& series);
DynamicGraphSeries series_from_json(const std::string& text);

}  // namespace pengcde
