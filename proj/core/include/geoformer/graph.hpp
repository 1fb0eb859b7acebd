#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoformer/matrix.hpp"

namespace geoformer {

/// Undirected graph in CSR form with dense node features and labels.
///
/// Invariants: neighbor lists are sorted, symmetric, duplicate-free and
/// contain no self-loops; labels are -1 (unlabeled) or in [0, num_classes).
class Graph {
 public:
  Graph() = default;

  /// Builds the symmetric closure of `edges`, dropping self-loops and duplicates.
  static Graph from_edges(std::size_t num_nodes, std::span<const std::pair<std::size_t, std::size_t>> edges,
                          Matrix features, std::vector<int> labels, std::size_t num_classes);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const { return targets_.size() / 2; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_features() const { return features_.cols(); }

  std::span<const std::size_t> neighbors(std::size_t v) const {
    return {targets_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  std::size_t degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }
  bool has_edge(std::size_t u, std::size_t v) const;

  const std::vector<std::size_t>& csr_offsets() const { return offsets_; }
  const std::vector<std::size_t>& csr_targets() const { return targets_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }

  /// Each undirected edge once, as (u, v) with u < v, in CSR order.
  std::vector<std::pair<std::size_t, std::size_t>> edge_list() const;

  /// Subgraph induced by `nodes`; node i of the result is nodes[i].
  Graph induced(std::span<const std::size_t> nodes) const;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> targets_;
  Matrix features_;
  std::vector<int> labels_;
  std::size_t num_classes_ = 0;
};

struct SplitMasks {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> val;
  std::vector<std::uint8_t> test;
};

/// Indices of the set entries of a mask, ascending.
std::vector<std::size_t> mask_indices(std::span<const std::uint8_t> mask);

/// Throws SplitError unless masks are pairwise disjoint and select only labeled nodes.
void validate_masks(const Graph& g, const SplitMasks& masks);

/// Â = D̃^{-1/2} (A + I) D̃^{-1/2}.
struct NormalizedAdjacency {
  CsrMatrix matrix;
};

NormalizedAdjacency normalize_adjacency(const Graph& g);

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
};

/// Accuracy and F1 scores over the masked nodes. Macro F1 averages only the
/// classes that occur in the masked ground truth.
Metrics compute_metrics(std::span<const int> pred, std::span<const int> labels,
                        std::span<const std::uint8_t> mask, std::size_t num_classes);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Stratified random split; deterministic per seed.
SplitMasks split_nodes(const Graph& g, SplitFractions fractions, std::uint64_t seed);

enum class SyntheticKind { tree, sbm, clique_ring };

struct SyntheticParams {
  SyntheticKind kind = SyntheticKind::sbm;
  // tree
  std::size_t branching = 2;
  std::size_t depth = 3;
  std::size_t depth_bands = 2;
  // sbm
  std::vector<std::size_t> block_sizes{100, 100};
  double p_in = 0.5;
  double p_out = 0.02;
  // clique_ring
  std::size_t clique_size = 5;
  std::size_t clique_count = 4;
  // features
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  double mean_scale = 1.0;
};

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

std::pair<Graph, SplitMasks> generate_synthetic(const SyntheticParams& params, std::uint64_t seed);

/// Reads meta.json, edges.tsv, features.csv, labels.tsv and splits.json.
std::pair<Graph, SplitMasks> load_graph(const std::filesystem::path& dir);
void save_graph(const Graph& g, const SplitMasks& masks, const std::filesystem::path& dir);

}  // namespace geoformer
