#include "geoformer/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoformer/error.hpp"
#include "geoformer/random.hpp"

namespace geoformer {

namespace fs = std::filesystem;
using json = nlohmann::json;

Graph Graph::from_edges(std::size_t num_nodes,
                        std::span<const std::pair<std::size_t, std::size_t>> edges,
                        Matrix features, std::vector<int> labels, std::size_t num_classes) {
  if (features.rows() != num_nodes) {
    throw DimensionError("Graph: feature rows " + std::to_string(features.rows()) +
                         " != num_nodes " + std::to_string(num_nodes));
  }
  if (labels.size() != num_nodes) throw DimensionError("Graph: one label per node required");
  for (int y : labels) {
    if (y < -1 || (y >= 0 && static_cast<std::size_t>(y) >= num_classes)) {
      throw ContractError("Graph: label " + std::to_string(y) + " outside [-1, " +
                          std::to_string(num_classes) + ")");
    }
  }
  std::vector<std::vector<std::size_t>> adj(num_nodes);
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw ContractError("Graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                          ") references a node outside [0," + std::to_string(num_nodes) + ")");
    }
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  Graph g;
  g.offsets_.assign(num_nodes + 1, 0);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    auto& nb = adj[v];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    g.offsets_[v + 1] = g.offsets_[v] + nb.size();
  }
  g.targets_.reserve(g.offsets_.back());
  for (const auto& nb : adj) g.targets_.insert(g.targets_.end(), nb.begin(), nb.end());
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  g.num_classes_ = num_classes;
  return g;
}

bool Graph::has_edge(std::size_t u, std::size_t v) const {
  const auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<std::pair<std::size_t, std::size_t>> Graph::edge_list() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(num_edges());
  for (std::size_t u = 0; u < num_nodes(); ++u) {
    for (std::size_t v : neighbors(u)) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

Graph Graph::induced(std::span<const std::size_t> nodes) const {
  constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> local(num_nodes(), kAbsent);
  for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t w : neighbors(nodes[i])) {
      if (local[w] != kAbsent && i < local[w]) edges.emplace_back(i, local[w]);
    }
  }
  std::vector<int> labels(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) labels[i] = labels_[nodes[i]];
  return from_edges(nodes.size(), edges, gather_rows(features_, nodes), std::move(labels),
                    num_classes_);
}

std::vector<std::size_t> mask_indices(std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

void validate_masks(const Graph& g, const SplitMasks& masks) {
  const std::size_t n = g.num_nodes();
  if (masks.train.size() != n || masks.val.size() != n || masks.test.size() != n) {
    throw SplitError("split masks must have one entry per node");
  }
  for (std::size_t v = 0; v < n; ++v) {
    const int count = (masks.train[v] ? 1 : 0) + (masks.val[v] ? 1 : 0) + (masks.test[v] ? 1 : 0);
    if (count > 1) throw SplitError("node " + std::to_string(v) + " appears in several splits");
    if (count == 1 && g.labels()[v] < 0) {
      throw SplitError("node " + std::to_string(v) + " is in a split but unlabeled");
    }
  }
}

NormalizedAdjacency normalize_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<double> inv_sqrt(n);
  for (std::size_t v = 0; v < n; ++v) inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(g.degree(v) + 1));
  CsrMatrix m;
  m.rows = n;
  m.cols = n;
  m.offsets.assign(n + 1, 0);
  m.indices.reserve(g.csr_targets().size() + n);
  m.values.reserve(g.csr_targets().size() + n);
  for (std::size_t v = 0; v < n; ++v) {
    bool self_done = false;
    for (std::size_t w : g.neighbors(v)) {
      if (!self_done && w > v) {
        m.indices.push_back(v);
        m.values.push_back(inv_sqrt[v] * inv_sqrt[v]);
        self_done = true;
      }
      m.indices.push_back(w);
      m.values.push_back(inv_sqrt[v] * inv_sqrt[w]);
    }
    if (!self_done) {
      m.indices.push_back(v);
      m.values.push_back(inv_sqrt[v] * inv_sqrt[v]);
    }
    m.offsets[v + 1] = m.indices.size();
  }
  return NormalizedAdjacency{std::move(m)};
}

Metrics compute_metrics(std::span<const int> pred, std::span<const int> labels,
                        std::span<const std::uint8_t> mask, std::size_t num_classes) {
  if (pred.size() != labels.size() || mask.size() != labels.size()) {
    throw DimensionError("compute_metrics: pred, labels and mask lengths differ");
  }
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0),
      support(num_classes, 0.0);
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractError("compute_metrics: masked node " + std::to_string(i) + " has no label");
    }
    ++total;
    support[y] += 1.0;
    const int p = pred[i];
    const bool valid_pred = p >= 0 && static_cast<std::size_t>(p) < num_classes;
    if (p == y) {
      ++correct;
      tp[y] += 1.0;
    } else {
      fn[y] += 1.0;
      if (valid_pred) fp[p] += 1.0;
    }
  }
  if (total == 0) throw ContractError("compute_metrics: mask selects no nodes");

  Metrics m;
  m.per_class_f1.assign(num_classes, 0.0);
  double macro_sum = 0.0;
  double weighted_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    m.per_class_f1[c] = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    if (support[c] > 0.0) {
      ++present;
      macro_sum += m.per_class_f1[c];
      weighted_sum += support[c] * m.per_class_f1[c];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  m.macro_f1 = macro_sum / static_cast<double>(present);
  m.weighted_f1 = weighted_sum / static_cast<double>(total);
  return m;
}

SplitMasks split_nodes(const Graph& g, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) || f.train + f.val + f.test > 1.0 + 1e-9) {
    throw SplitError("split fractions must be positive and sum to at most 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (g.labels()[v] >= 0) by_class[g.labels()[v]].push_back(v);
  }
  Rng rng(seed);
  const std::size_t n = g.num_nodes();
  SplitMasks masks{std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0),
                   std::vector<std::uint8_t>(n, 0)};
  for (auto& [cls, nodes] : by_class) {
    if (nodes.size() < 3) {
      throw SplitError("class " + std::to_string(cls) + " has fewer than 3 labeled nodes");
    }
    rng.shuffle(nodes);
    const double count = static_cast<double>(nodes.size());
    // Every split receives at least one node of each class.
    std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f.train * count)));
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f.val * count)));
    n_train = std::min(n_train, nodes.size() - 2);
    n_val = std::min(n_val, nodes.size() - n_train - 1);
    std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f.test * count)));
    n_test = std::min(n_test, nodes.size() - n_train - n_val);
    for (std::size_t i = 0; i < n_train; ++i) masks.train[nodes[i]] = 1;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) masks.val[nodes[i]] = 1;
    for (std::size_t i = n_train + n_val; i < n_train + n_val + n_test; ++i) masks.test[nodes[i]] = 1;
  }
  return masks;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "tree") return SyntheticKind::tree;
  if (name == "sbm") return SyntheticKind::sbm;
  if (name == "clique_ring") return SyntheticKind::clique_ring;
  throw ConfigError("unknown synthetic graph kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::tree:
      return "tree";
    case SyntheticKind::sbm:
      return "sbm";
    case SyntheticKind::clique_ring:
      return "clique_ring";
  }
  return "unknown";
}

namespace {

Matrix block_features(std::span<const int> labels, std::size_t classes, const SyntheticParams& p,
                      Rng& rng) {
  Matrix means(classes, p.feature_dim);
  for (double& v : means.values()) v = p.mean_scale * rng.normal();
  Matrix x(labels.size(), p.feature_dim);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    for (std::size_t c = 0; c < p.feature_dim; ++c) {
      x(v, c) = means(static_cast<std::size_t>(labels[v]), c) + p.feature_noise * rng.normal();
    }
  }
  return x;
}

}  // namespace

std::pair<Graph, SplitMasks> generate_synthetic(const SyntheticParams& p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<int> labels;
  Matrix features;
  std::size_t classes = 0;

  switch (p.kind) {
    case SyntheticKind::tree: {
      if (p.branching < 2) throw ConfigError("tree: branching must be >= 2");
      if (p.depth < 1) throw ConfigError("tree: depth must be >= 1");
      if (p.depth_bands < 1 || p.depth_bands > p.depth + 1) {
        throw ConfigError("tree: depth_bands must lie in [1, depth + 1]");
      }
      // Complete b-ary tree, breadth-first numbering: children of i are b*i+1 .. b*i+b.
      std::size_t n = 0;
      std::size_t level = 1;
      for (std::size_t d = 0; d <= p.depth; ++d) {
        n += level;
        level *= p.branching;
      }
      std::vector<std::size_t> node_depth(n, 0);
      for (std::size_t i = 1; i < n; ++i) {
        const std::size_t parent = (i - 1) / p.branching;
        node_depth[i] = node_depth[parent] + 1;
        edges.emplace_back(parent, i);
      }
      classes = p.depth_bands;
      labels.resize(n);
      features = Matrix(n, p.depth + 1);
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(node_depth[i] * p.depth_bands / (p.depth + 1));
        for (std::size_t c = 0; c <= p.depth; ++c) {
          features(i, c) = (c == node_depth[i] ? 1.0 : 0.0) + p.feature_noise * rng.normal();
        }
      }
      break;
    }
    case SyntheticKind::sbm: {
      if (p.block_sizes.empty()) throw ConfigError("sbm: at least one block required");
      for (std::size_t s : p.block_sizes) {
        if (s == 0) throw ConfigError("sbm: block sizes must be positive");
      }
      if (p.p_in < 0.0 || p.p_in > 1.0 || p.p_out < 0.0 || p.p_out > 1.0) {
        throw ConfigError("sbm: probabilities must lie in [0, 1]");
      }
      if (p.feature_dim == 0) throw ConfigError("sbm: feature_dim must be positive");
      for (std::size_t b = 0; b < p.block_sizes.size(); ++b) {
        labels.insert(labels.end(), p.block_sizes[b], static_cast<int>(b));
      }
      classes = p.block_sizes.size();
      const std::size_t n = labels.size();
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
          const double prob = labels[u] == labels[v] ? p.p_in : p.p_out;
          if (rng.bernoulli(prob)) edges.emplace_back(u, v);
        }
      }
      features = block_features(labels, classes, p, rng);
      break;
    }
    case SyntheticKind::clique_ring: {
      if (p.clique_size < 2) throw ConfigError("clique_ring: clique_size must be >= 2");
      if (p.clique_count < 1) throw ConfigError("clique_ring: clique_count must be >= 1");
      if (p.feature_dim == 0) throw ConfigError("clique_ring: feature_dim must be positive");
      const std::size_t s = p.clique_size;
      for (std::size_t c = 0; c < p.clique_count; ++c) {
        for (std::size_t i = 0; i < s; ++i) {
          labels.push_back(static_cast<int>(c));
          for (std::size_t j = i + 1; j < s; ++j) edges.emplace_back(c * s + i, c * s + j);
        }
        if (p.clique_count > 1) {
          const std::size_t next = (c + 1) % p.clique_count;
          edges.emplace_back(c * s + s - 1, next * s);
        }
      }
      classes = p.clique_count;
      features = block_features(labels, classes, p, rng);
      break;
    }
  }
  const std::size_t n = labels.size();
  Graph g = Graph::from_edges(n, edges, std::move(features), std::move(labels), classes);
  SplitMasks masks = split_nodes(g, SplitFractions{}, seed);
  return {std::move(g), std::move(masks)};
}

namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing or unreadable file: " + path.string());
  return in;
}

json read_json(const fs::path& path) {
  std::ifstream in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.filename().string() + ": invalid JSON (" + e.what() + ")");
  }
}

std::size_t parse_index(const std::string& token, const std::string& where) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(token, &pos);
  } catch (const std::exception&) {
    throw LoadError(where + ": expected an integer, got '" + token + "'");
  }
  if (pos != token.size()) throw LoadError(where + ": trailing characters in '" + token + "'");
  if (v < 0) throw LoadError(where + ": negative index " + token);
  return static_cast<std::size_t>(v);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::pair<Graph, SplitMasks> load_graph(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  std::size_t n = 0, d = 0, classes = 0;
  try {
    n = meta.at("num_nodes").get<std::size_t>();
    d = meta.at("num_features").get<std::size_t>();
    classes = meta.at("num_classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw LoadError(std::string("meta.json: ") + e.what());
  }

  std::vector<std::pair<std::size_t, std::size_t>> edges;
  {
    std::ifstream in = open_input(dir / "edges.tsv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string a, b, extra;
      const std::string where = "edges.tsv line " + std::to_string(lineno);
      if (!(ss >> a >> b) || (ss >> extra)) throw LoadError(where + ": expected 'u<TAB>v'");
      const std::size_t u = parse_index(a, where);
      const std::size_t v = parse_index(b, where);
      if (u >= n || v >= n) throw LoadError(where + ": node index out of range");
      edges.emplace_back(u, v);
    }
  }

  Matrix features(n, d);
  {
    std::ifstream in = open_input(dir / "features.csv");
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      if (row >= n) throw LoadError("features.csv: more than num_nodes rows");
      std::size_t col = 0;
      std::size_t start = 0;
      while (start <= line.size()) {
        const std::size_t comma = std::min(line.find(',', start), line.size());
        if (col >= d) throw LoadError("features.csv row " + std::to_string(row) + ": too many columns");
        const std::string tok = trim(line.substr(start, comma - start));
        try {
          std::size_t pos = 0;
          features(row, col) = std::stod(tok, &pos);
          if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw LoadError("features.csv row " + std::to_string(row) + ": bad number '" + tok + "'");
        }
        ++col;
        start = comma + 1;
      }
      if (col != d) {
        throw LoadError("features.csv row " + std::to_string(row) + ": expected " +
                        std::to_string(d) + " columns, got " + std::to_string(col));
      }
      ++row;
    }
    if (row != n) {
      throw LoadError("features.csv: expected " + std::to_string(n) + " rows, got " +
                      std::to_string(row));
    }
  }

  std::vector<int> labels;
  {
    std::ifstream in = open_input(dir / "labels.tsv");
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.empty()) continue;
      int y = 0;
      try {
        std::size_t pos = 0;
        y = std::stoi(line, &pos);
        if (pos != line.size()) throw std::invalid_argument(line);
      } catch (const std::exception&) {
        throw LoadError("labels.tsv: bad label '" + line + "'");
      }
      if (y < -1 || (y >= 0 && static_cast<std::size_t>(y) >= classes)) {
        throw LoadError("labels.tsv: label " + std::to_string(y) + " outside [-1, " +
                        std::to_string(classes) + ")");
      }
      labels.push_back(y);
    }
    if (labels.size() != n) {
      throw LoadError("labels.tsv: expected " + std::to_string(n) + " rows, got " +
                      std::to_string(labels.size()));
    }
  }

  Graph g = Graph::from_edges(n, edges, std::move(features), std::move(labels), classes);

  const json splits = read_json(dir / "splits.json");
  SplitMasks masks{std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0),
                   std::vector<std::uint8_t>(n, 0)};
  auto fill = [&](const char* key, std::vector<std::uint8_t>& mask) {
    if (!splits.contains(key)) throw LoadError(std::string("splits.json: missing '") + key + "'");
    for (const auto& e : splits.at(key)) {
      if (!e.is_number_integer()) throw LoadError(std::string("splits.json: non-integer in ") + key);
      const auto v = e.get<long long>();
      if (v < 0 || static_cast<std::size_t>(v) >= n) {
        throw LoadError(std::string("splits.json: index out of range in ") + key);
      }
      mask[static_cast<std::size_t>(v)] = 1;
    }
  };
  fill("train", masks.train);
  fill("val", masks.val);
  fill("test", masks.test);
  try {
    validate_masks(g, masks);
  } catch (const SplitError& e) {
    throw LoadError(std::string("splits.json: ") + e.what());
  }
  return {std::move(g), std::move(masks)};
}

void save_graph(const Graph& g, const SplitMasks& masks, const fs::path& dir) {
  fs::create_directories(dir);
  {
    json meta = {{"num_nodes", g.num_nodes()},
                 {"num_features", g.num_features()},
                 {"num_classes", g.num_classes()}};
    std::ofstream out(dir / "meta.json");
    out << meta.dump() << "\n";
  }
  {
    std::ofstream out(dir / "edges.tsv");
    for (auto [u, v] : g.edge_list()) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(dir / "features.csv");
    const Matrix& x = g.features();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (c) out << ',';
        out << format_double(x(r, c));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.tsv");
    for (int y : g.labels()) out << y << '\n';
  }
  {
    json splits = {{"train", mask_indices(masks.train)},
                   {"val", mask_indices(masks.val)},
                   {"test", mask_indices(masks.test)}};
    std::ofstream out(dir / "splits.json");
    out << splits.dump() << "\n";
  }
}

}  // namespace geoformer
