#include "gwnet/graph.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gwnet/errors.hpp"

namespace gwnet {

Graph::Graph(Matrix a, bool directed_flag) : n(a.rows()), adjacency(std::move(a)), directed(directed_flag) {
  if (adjacency.rows() != adjacency.cols())
    throw ValidationError("graph adjacency must be square, got " + std::to_string(adjacency.rows()) + "x" +
                          std::to_string(adjacency.cols()));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double v = adjacency(i, j);
      if (!std::isfinite(v)) throw ValidationError("graph adjacency has a non-finite entry");
      if (v < 0.0)
        throw ValidationError("graph adjacency entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is negative");
    }
  adjacency.diagonal().setZero();
}

Index Graph::edge_count() const {
  Index e = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j && adjacency(i, j) > 0.0) ++e;
  return e;
}

Matrix row_normalize(const Matrix& a) {
  if (a.minCoeff() < 0.0) throw ValidationError("row_normalize: negative entry");
  Matrix out = a;
  for (Index i = 0; i < a.rows(); ++i) {
    const double s = a.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

TransitionSet build_transitions(const Graph& g, int k) {
  if (k < 0) throw ValidationError("build_transitions: diffusion step must be >= 0");
  TransitionSet ts;
  ts.forward = row_normalize(g.adjacency);
  if (g.directed) ts.backward = row_normalize(g.adjacency.transpose());
  ts.max_step = k;
  return ts;
}

NodeEmbeddings make_node_embeddings(Index n, Index dim, std::mt19937_64& rng) {
  if (n < 1 || dim < 1) throw ValidationError("node embeddings need n >= 1 and dim >= 1");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  NodeEmbeddings e;
  e.dim = dim;
  e.source = Tensor({n, dim});
  e.target = Tensor({n, dim});
  for (Index i = 0; i < n * dim; ++i) e.source[i] = uni(rng);
  for (Index i = 0; i < n * dim; ++i) e.target[i] = uni(rng);
  e.source.set_requires_grad(true);
  e.target.set_requires_grad(true);
  return e;
}

Tensor adaptive_adjacency(const NodeEmbeddings& e) {
  if (e.source.dim(1) != e.target.dim(1))
    throw DimensionError("adaptive_adjacency: embedding dims disagree, " + shape_to_string(e.source.shape()) +
                         " vs " + shape_to_string(e.target.shape()));
  return softmax_rows(relu(matmul(e.source, transpose2d(e.target))));
}

Graph gaussian_threshold_adjacency(const Matrix& dist, double sigma, double kappa) {
  if (sigma <= 0.0) throw ValidationError("gaussian_threshold_adjacency: sigma must be positive");
  if (dist.minCoeff() < 0.0) throw ValidationError("gaussian_threshold_adjacency: negative distance");
  const Index n = dist.rows();
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = std::exp(-(dist(i, j) * dist(i, j)) / (sigma * sigma));
      if (w >= kappa) a(i, j) = w;
    }
  const Matrix at = a.transpose();
  const bool directed = (a.array() != at.array()).any();
  return Graph(std::move(a), directed);
}

double default_gaussian_sigma(const Matrix& dist) {
  const Index n = dist.size();
  if (n == 0) throw ValidationError("default_gaussian_sigma: empty distance matrix");
  const double mean = dist.mean();
  double var = 0.0;
  for (Index i = 0; i < dist.rows(); ++i)
    for (Index j = 0; j < dist.cols(); ++j) {
      const double d = dist(i, j) - mean;
      var += d * d;
    }
  return std::sqrt(var / static_cast<double>(n));
}

void export_heatmap(const Matrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char buf[64];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path);
}

Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.c_str();
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p)
        throw ParseError(path + ":" + std::to_string(lineno) + ": non-numeric cell");
      row.push_back(v);
      p = end;
      while (*p == ' ' || *p == '\t') ++p;
      if (*p == ',') {
        ++p;
        continue;
      }
      if (*p == '\0' || *p == '\r') break;
      throw ParseError(path + ":" + std::to_string(lineno) + ": unexpected character '" + *p + "'");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row, expected " +
                       std::to_string(rows.front().size()) + " cells, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": empty matrix file");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace gwnet
