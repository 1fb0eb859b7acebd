#include <cmath>
#include <fstream>
#include <set>

#include "geoformer/error.hpp"
#include "geoformer/graph.hpp"
#include "test_util.hpp"

using namespace geoformer;
namespace fs = std::filesystem;

namespace {

using Edges = std::vector<std::pair<std::size_t, std::size_t>>;

Graph path3() {
  const Edges e{{0, 1}, {1, 2}};
  return Graph::from_edges(3, e, Matrix(3, 1, 1.0), {0, 1, 0}, 2);
}

std::vector<std::uint8_t> mask_of(std::size_t n, std::initializer_list<std::size_t> on) {
  std::vector<std::uint8_t> m(n, 0);
  for (std::size_t i : on) m[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("csr construction") {
  const Graph g = path3();
  CHECK(g.degree(0) == 1);
  CHECK(g.degree(1) == 2);
  CHECK(g.degree(2) == 1);
  CHECK(g.num_edges() == 2);
  CHECK(g.has_edge(2, 1));
  CHECK_FALSE(g.has_edge(0, 2));

  const Edges dup{{0, 1}, {1, 0}, {1, 1}};
  const Graph d = Graph::from_edges(2, dup, Matrix(2, 1), {0, 0}, 1);
  CHECK(d.num_edges() == 1);
  CHECK(d.degree(0) == 1);
}

TEST_CASE("induced subgraph") {
  const Graph g = path3();
  const std::vector<std::size_t> keep{1, 2};
  const Graph s = g.induced(keep);
  CHECK(s.num_nodes() == 2);
  CHECK(s.num_edges() == 1);
  CHECK(s.labels() == std::vector<int>{1, 0});
}

TEST_CASE("normalize_adjacency") {
  const Graph iso = Graph::from_edges(1, Edges{}, Matrix(1, 1), {0}, 1);
  CHECK(normalize_adjacency(iso).matrix.to_dense() == Matrix{{1.0}});

  const Graph pair = Graph::from_edges(2, Edges{{0, 1}}, Matrix(2, 1), {0, 0}, 1);
  testutil::check_close(normalize_adjacency(pair).matrix.to_dense(), Matrix(2, 2, 0.5), 1e-15);

  // Degrees with self-loops 2, 3, 2: end rows 1/2 + 1/√6, middle row 1/3 + 2/√6.
  const Matrix rs = row_sums(normalize_adjacency(path3()).matrix.to_dense());
  const double end = 0.5 + 1.0 / std::sqrt(6.0);
  const double mid = 1.0 / 3.0 + 2.0 / std::sqrt(6.0);
  CHECK(rs(0, 0) == doctest::Approx(end).epsilon(1e-14));
  CHECK(rs(1, 0) == doctest::Approx(mid).epsilon(1e-14));
  CHECK(rs(2, 0) == doctest::Approx(end).epsilon(1e-14));
}

TEST_CASE("generate_synthetic shapes") {
  SyntheticParams tp;
  tp.kind = SyntheticKind::tree;
  tp.branching = 2;
  tp.depth = 3;
  const auto [tree, tmask] = generate_synthetic(tp, 0);
  CHECK(tree.num_nodes() == 15);
  CHECK(tree.num_edges() == 14);

  SyntheticParams sp;
  sp.block_sizes = {5, 5};
  sp.p_in = 1.0;
  sp.p_out = 0.0;
  const auto [sbm, smask] = generate_synthetic(sp, 0);
  CHECK(sbm.num_edges() == 20);
  for (std::size_t v = 0; v < 10; ++v) CHECK(sbm.degree(v) == 4);

  SyntheticParams cp;
  cp.kind = SyntheticKind::clique_ring;
  const auto [ring, rmask] = generate_synthetic(cp, 0);
  CHECK(ring.num_nodes() == cp.clique_size * cp.clique_count);
}

TEST_CASE("generate_synthetic is deterministic per seed") {
  SyntheticParams sp;
  const auto [a, ma] = generate_synthetic(sp, 7);
  const auto [b, mb] = generate_synthetic(sp, 7);
  const auto [c, mc] = generate_synthetic(sp, 8);
  CHECK(a.edge_list() == b.edge_list());
  CHECK(a.features() == b.features());
  CHECK(ma.train == mb.train);
  CHECK(a.edge_list() != c.edge_list());
}

TEST_CASE("invalid generator params") {
  SyntheticParams tp;
  tp.kind = SyntheticKind::tree;
  tp.branching = 1;
  CHECK_THROWS_AS(generate_synthetic(tp, 0), ConfigError);
  CHECK_THROWS_AS(parse_synthetic_kind("torus"), ConfigError);
}

TEST_CASE("compute_metrics") {
  const std::vector<int> labels{0, 0, 1, 1};
  const auto all = mask_of(4, {0, 1, 2, 3});
  const Metrics perfect = compute_metrics(labels, labels, all, 2);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.weighted_f1 == 1.0);

  const std::vector<int> zeros{0, 0, 0, 0};
  const Metrics m = compute_metrics(zeros, labels, all, 2);
  CHECK(m.accuracy == doctest::Approx(0.5));
  CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_f1[1] == doctest::Approx(0.0));
  CHECK(m.macro_f1 == doctest::Approx(1.0 / 3.0));
  CHECK(m.weighted_f1 == doctest::Approx(1.0 / 3.0));

  const Metrics one = compute_metrics(std::vector<int>{1, 0, 1, 0}, labels, mask_of(4, {2}), 2);
  CHECK(one.accuracy == 1.0);
  CHECK(one.macro_f1 == 1.0);
  CHECK(one.weighted_f1 == 1.0);
}

TEST_CASE("compute_metrics matches a hand confusion matrix") {
  // 3 classes; confusion rows = truth: [[2,1,0],[0,1,1],[1,0,2]].
  const std::vector<int> truth{0, 0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> pred{0, 0, 1, 1, 2, 0, 2, 2};
  const Metrics m = compute_metrics(pred, truth, mask_of(8, {0, 1, 2, 3, 4, 5, 6, 7}), 3);
  const double f0 = 2.0 * 2 / (2 * 2 + 1 + 1);  // tp 2, fp 1, fn 1
  const double f1 = 2.0 * 1 / (2 * 1 + 1 + 1);
  const double f2 = 2.0 * 2 / (2 * 2 + 1 + 1);
  CHECK(m.accuracy == doctest::Approx(5.0 / 8.0));
  CHECK(m.macro_f1 == doctest::Approx((f0 + f1 + f2) / 3.0));
  CHECK(m.weighted_f1 == doctest::Approx((3 * f0 + 2 * f1 + 3 * f2) / 8.0));
}

TEST_CASE("compute_metrics rejects an empty mask") {
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0}, std::vector<int>{0}, std::vector<std::uint8_t>{0}, 1),
                  ContractError);
}

TEST_CASE("split_nodes") {
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[i] = i % 2;
  const Graph g = Graph::from_edges(100, Edges{}, Matrix(100, 1), labels, 2);
  const SplitMasks m = split_nodes(g, SplitFractions{0.6, 0.2, 0.2}, 3);
  CHECK(mask_indices(m.train).size() == doctest::Approx(60).epsilon(0.04));
  CHECK(mask_indices(m.val).size() == doctest::Approx(20).epsilon(0.1));
  CHECK(mask_indices(m.test).size() == doctest::Approx(20).epsilon(0.1));
  for (std::size_t v = 0; v < 100; ++v) CHECK(m.train[v] + m.val[v] + m.test[v] <= 1);
  CHECK_NOTHROW(validate_masks(g, m));
  const SplitMasks again = split_nodes(g, SplitFractions{0.6, 0.2, 0.2}, 3);
  CHECK(again.train == m.train);
  CHECK(again.test == m.test);
  CHECK_THROWS_AS(split_nodes(g, SplitFractions{0.8, 0.2, 0.2}, 0), SplitError);
}

TEST_CASE("validate_masks detects overlap") {
  const Graph g = path3();
  SplitMasks m{mask_of(3, {0}), mask_of(3, {0}), mask_of(3, {2})};
  CHECK_THROWS_AS(validate_masks(g, m), SplitError);
}

TEST_CASE("save and load round trip") {
  SyntheticParams sp;
  sp.block_sizes = {12, 9};
  const auto [g, masks] = generate_synthetic(sp, 4);
  const fs::path dir = testutil::scratch_dir("graph_roundtrip");
  save_graph(g, masks, dir);
  const auto [h, hm] = load_graph(dir);
  CHECK(h.edge_list() == g.edge_list());
  CHECK(h.features() == g.features());
  CHECK(h.labels() == g.labels());
  CHECK(hm.train == masks.train);
  CHECK(hm.val == masks.val);
  CHECK(hm.test == masks.test);
}

TEST_CASE("load errors") {
  SyntheticParams sp;
  sp.block_sizes = {5, 5};
  const auto [g, masks] = generate_synthetic(sp, 1);
  const fs::path dir = testutil::scratch_dir("graph_errors");
  save_graph(g, masks, dir);
  {
    std::ofstream out(dir / "labels.tsv");
    for (std::size_t v = 0; v < 10; ++v) out << (v == 3 ? 2 : 0) << '\n';
  }
  CHECK_THROWS_AS(load_graph(dir), LoadError);

  save_graph(g, masks, dir);
  fs::remove(dir / "edges.tsv");
  CHECK_THROWS_AS(load_graph(dir), LoadError);

  save_graph(g, masks, dir);
  {
    std::ofstream out(dir / "edges.tsv", std::ios::app);
    out << "0\t99\n";
  }
  CHECK_THROWS_AS(load_graph(dir), LoadError);
}
