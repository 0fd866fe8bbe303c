#pragma once

// Seeded synthetic datasets and CSV ingestion for the classifiers.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fpna/model.hpp"

namespace fpna::data {

/// Gaussian blobs: class centres drawn N(0, separation²) per coordinate,
/// points at centre + N(0, noise²). Rows cycle through the classes.
Graph make_blobs(std::size_t n, std::size_t dim, int n_classes, double separation, double noise, std::uint64_t seed);

struct SbmConfig {
  std::size_t n_nodes = 1000;
  int n_classes = 4;
  double p_in = 0.02;    // edge probability within a class
  double p_out = 0.002;  // edge probability across classes
  std::size_t feature_dim = 16;
  double feature_signal = 1.0;  // scale of the class means
  double feature_noise = 1.0;

  void validate() const;
};

/// Stochastic block model with class-correlated features. Every sampled
/// undirected pair contributes both directed edges; the edge list is in
/// generation order (by source, then destination).
Graph make_sbm(const SbmConfig& config, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle of [0, n) into `n_train` training rows and up to `n_val`
/// validation rows, each list sorted.
Split split_rows(std::size_t n, std::size_t n_train, std::size_t n_val, std::uint64_t seed);

/// Edge list (`src,dst` per line), features (one comma-separated row per
/// node) and labels (one integer per line). A leading non-numeric header
/// line is skipped in each file. `labels` may be empty.
Graph load_graph_csv(const std::filesystem::path& edges, const std::filesystem::path& features,
                     const std::filesystem::path& labels);

}  // namespace fpna::data
