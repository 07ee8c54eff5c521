#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gwnet/graph.hpp"
#include "test_util.hpp"

using namespace gwnet;
using testutil::make_rng;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gwnet_test_" + name);
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("row_normalize basic cases") {
  Matrix eye = Matrix::Identity(3, 3);
  CHECK((row_normalize(eye) - eye).cwiseAbs().maxCoeff() == 0.0);

  Matrix a(3, 3);
  a << 0, 1, 1, 0, 0, 1, 0, 0, 0;
  Matrix p = row_normalize(a);
  Matrix expected(3, 3);
  expected << 0, 0.5, 0.5, 0, 0, 1, 0, 0, 0;
  CHECK((p - expected).cwiseAbs().maxCoeff() == 0.0);

  Matrix neg(2, 2);
  neg << 1, -0.5, 0, 1;
  CHECK_THROWS_AS(row_normalize(neg), ValidationError);
}

TEST_CASE("row_normalize is idempotent") {
  auto rng = make_rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Matrix a(6, 6);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) a(i, j) = uni(rng) < 0.4 ? uni(rng) : 0.0;
  Matrix once = row_normalize(a);
  Matrix twice = row_normalize(once);
  CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("row_normalize on a METR-LA-sized adjacency") {
  // 207 nodes, 1515 directed edges, as in the dataset's summary statistics
  const Index n = 207;
  const Index edges = 1515;
  auto rng = make_rng(207);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  Matrix a = Matrix::Zero(n, n);
  Index placed = 0;
  while (placed < edges) {
    const Index i = pick(rng), j = pick(rng);
    if (i == j || a(i, j) != 0.0) continue;
    a(i, j) = w(rng);
    ++placed;
  }
  Matrix p = row_normalize(a);
  CHECK(p.rows() == n);
  for (Index i = 0; i < n; ++i) {
    const double s = p.row(i).sum();
    CHECK((std::abs(s - 1.0) < 1e-12 || s == 0.0));
  }
}

TEST_CASE("build_transitions direction handling") {
  Matrix sym(3, 3);
  sym << 0, 1, 2, 1, 0, 1, 2, 1, 0;

  Graph undirected(sym, false);
  TransitionSet tu = build_transitions(undirected, 2);
  CHECK_FALSE(tu.backward.has_value());
  CHECK(tu.max_step == 2);

  Graph directed_sym(sym, true);
  TransitionSet td = build_transitions(directed_sym, 2);
  REQUIRE(td.backward.has_value());
  CHECK((td.forward - *td.backward).cwiseAbs().maxCoeff() == 0.0);

  // 3-node chain 0 -> 1 -> 2
  Matrix chain = Matrix::Zero(3, 3);
  chain(0, 1) = 1.0;
  chain(1, 2) = 1.0;
  Graph gchain(chain, true);
  TransitionSet tc = build_transitions(gchain, 1);
  Matrix expected_b = Matrix::Zero(3, 3);
  expected_b(1, 0) = 1.0;
  expected_b(2, 1) = 1.0;
  CHECK((*tc.backward - expected_b).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(build_transitions(gchain, -1), ValidationError);
}

TEST_CASE("graph construction zeroes the diagonal and validates entries") {
  Matrix a(2, 2);
  a << 5, 1, 1, 5;
  Graph g(a, false);
  CHECK(g.adjacency(0, 0) == 0.0);
  CHECK(g.adjacency(1, 1) == 0.0);
  CHECK(g.edge_count() == 2);

  Matrix bad(2, 2);
  bad << 0, -1, 0, 0;
  CHECK_THROWS_AS(Graph(bad, false), ValidationError);
}

TEST_CASE("adaptive_adjacency zero embeddings give the uniform matrix") {
  Tape::current().clear();
  NodeEmbeddings e;
  e.dim = 3;
  e.source = Tensor({4, 3});
  e.target = Tensor({4, 3});
  Tensor adp = adaptive_adjacency(e);
  for (Index i = 0; i < adp.numel(); ++i) CHECK(adp[i] == doctest::Approx(0.25).epsilon(1e-15));
  Tape::current().clear();
}

TEST_CASE("adaptive_adjacency identity embeddings") {
  Tape::current().clear();
  NodeEmbeddings e;
  e.dim = 2;
  e.source = Tensor({2, 2}, {1, 0, 0, 1});
  e.target = Tensor({2, 2}, {1, 0, 0, 1});
  Tensor adp = adaptive_adjacency(e);
  const double hi = 0.73105857863000490;
  const double lo = 0.26894142136999512;
  CHECK(adp.at({0, 0}) == doctest::Approx(hi).epsilon(1e-14));
  CHECK(adp.at({0, 1}) == doctest::Approx(lo).epsilon(1e-14));
  CHECK(adp.at({1, 0}) == doctest::Approx(lo).epsilon(1e-14));
  CHECK(adp.at({1, 1}) == doctest::Approx(hi).epsilon(1e-14));
  Tape::current().clear();
}

TEST_CASE("adaptive_adjacency is row-stochastic with strictly positive entries") {
  Tape::current().clear();
  auto rng = make_rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    NodeEmbeddings e;
    e.dim = 4;
    e.source = testutil::random_tensor({6, 4}, rng, -2.0, 2.0);
    e.target = testutil::random_tensor({6, 4}, rng, -2.0, 2.0);
    Tensor adp = adaptive_adjacency(e);
    for (Index r = 0; r < 6; ++r) {
      double s = 0.0;
      for (Index c = 0; c < 6; ++c) {
        CHECK(adp.at({r, c}) > 0.0);
        s += adp.at({r, c});
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  Tape::current().clear();
}

TEST_CASE("adaptive_adjacency gradient reaches the source embeddings") {
  Tape::current().clear();
  auto rng = make_rng(9);
  Tensor target = testutil::random_tensor({5, 3}, rng, 0.1, 1.0);
  auto f = [&](const Tensor& src) {
    NodeEmbeddings e;
    e.dim = 3;
    e.source = src;
    e.target = target;
    Tensor adp = adaptive_adjacency(e);
    // weight the entries so the softmax gradient is nondegenerate
    return sum(mul(adp, adp));
  };
  // positive embeddings keep relu away from its kink
  Tensor src = testutil::random_tensor({5, 3}, rng, 0.1, 1.0);
  CHECK(grad_check<double>(f, src) < 1e-5);
  Tape::current().clear();
}

TEST_CASE("gaussian_threshold_adjacency kernel and threshold") {
  Matrix dist(2, 2);
  dist << 0, 0, 0, 0;
  Graph g0 = gaussian_threshold_adjacency(dist, 1.0, 0.5);
  CHECK(g0.adjacency(0, 1) == 1.0);
  CHECK(g0.adjacency(1, 0) == 1.0);
  CHECK(g0.adjacency(0, 0) == 0.0);

  Graph gcut = gaussian_threshold_adjacency(dist, 1.0, 1.0 + 1e-12);
  CHECK(gcut.adjacency.cwiseAbs().maxCoeff() == 0.0);

  Matrix d2(2, 2);
  d2 << 0, 1, 1, 0;
  Graph g2 = gaussian_threshold_adjacency(d2, 1.0, 0.1);
  CHECK(g2.adjacency(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK_FALSE(g2.directed);

  Matrix d3(2, 2);
  d3 << 0, 0.5, 3.0, 0;
  Graph g3 = gaussian_threshold_adjacency(d3, 1.0, 0.01);
  CHECK(g3.directed);

  CHECK_THROWS_AS(gaussian_threshold_adjacency(d2, 0.0, 0.1), ValidationError);
}

TEST_CASE("default_gaussian_sigma is the distance standard deviation") {
  Matrix d(2, 2);
  d << 0, 2, 2, 0;
  // mean 1, squared deviations all 1
  CHECK(default_gaussian_sigma(d) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("export_heatmap writes exact decimal CSV") {
  auto path = temp_file("heatmap.csv");
  export_heatmap(Matrix::Identity(2, 2), path.string());
  std::ifstream in(path);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l1 == "1,0");
  CHECK(l2 == "0,1");
  std::filesystem::remove(path);
}

TEST_CASE("export_heatmap round-trips through load_matrix_csv") {
  auto rng = make_rng(21);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  Matrix m(7, 7);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 7; ++j) m(i, j) = uni(rng);
  auto path = temp_file("roundtrip.csv");
  export_heatmap(m, path.string());
  Matrix back = load_matrix_csv(path.string());
  CHECK((m - back).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("leading-block submatrix export") {
  auto rng = make_rng(25);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Matrix m(60, 60);
  for (Index i = 0; i < 60; ++i)
    for (Index j = 0; j < 60; ++j) m(i, j) = uni(rng);
  auto path = temp_file("block.csv");
  export_heatmap(m.topLeftCorner(50, 50), path.string());
  Matrix back = load_matrix_csv(path.string());
  CHECK(back.rows() == 50);
  CHECK(back.cols() == 50);
  CHECK((back - m.topLeftCorner(50, 50)).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("load_matrix_csv reports parse failures with line numbers") {
  auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "1,2\n3,x\n";
  }
  try {
    load_matrix_csv(path.string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "1,2\n3\n";
  }
  CHECK_THROWS_AS(load_matrix_csv(path.string()), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("export_heatmap surfaces the path on failure") {
  try {
    export_heatmap(Matrix::Identity(2, 2), "/nonexistent-dir/x.csv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent-dir/x.csv") != std::string::npos);
  }
}
