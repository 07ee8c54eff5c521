#pragma once

// Adjacency-derived objects: the fixed weighted graph, row-stochastic
// transition matrices for forward/backward diffusion, and the learnable
// node embeddings behind the self-adaptive adjacency.

#include <Eigen/Dense>

#include <optional>
#include <random>
#include <string>

#include "gwnet/nn_ops.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

using Matrix = Eigen::MatrixXd;

inline Tensor tensor_from_matrix(const Matrix& m) {
  Tensor t({m.rows(), m.cols()});
  t.mat_mut() = m;
  return t;
}

inline Matrix matrix_from_tensor(const Tensor& t) {
  t.require_rank(2, "matrix_from_tensor");
  return t.mat();
}

// Fixed nonnegative weighted graph. The diagonal is forced to zero at
// construction; the k=0 diffusion term already carries the identity.
struct Graph {
  Index n = 0;
  Matrix adjacency;
  bool directed = false;

  Graph() = default;
  Graph(Matrix a, bool directed_flag);

  Index edge_count() const;
};

// Row-normalized diffusion operators. backward is present iff the graph is
// directed; every row of each matrix sums to 1, or to 0 for isolated nodes.
struct TransitionSet {
  Matrix forward;
  std::optional<Matrix> backward;
  int max_step = 0;
};

// Learnable source/target embedding dictionaries.
struct NodeEmbeddings {
  Tensor source;  // [n, dim]
  Tensor target;  // [n, dim]
  Index dim = 0;
};

// Divide each nonzero row by its sum; all-zero rows stay zero.
Matrix row_normalize(const Matrix& a);

TransitionSet build_transitions(const Graph& g, int k);

// Uniform [0,1) initialization for both dictionaries.
NodeEmbeddings make_node_embeddings(Index n, Index dim, std::mt19937_64& rng);

// softmax_rows(relu(E1 E2^T)) on the tape: a differentiable row-stochastic
// matrix whose gradient reaches both embedding dictionaries.
Tensor adaptive_adjacency(const NodeEmbeddings& e);

// A_ij = exp(-dist_ij^2 / sigma^2) where that weight clears kappa and i != j.
Graph gaussian_threshold_adjacency(const Matrix& dist, double sigma, double kappa);

// Default kernel width: standard deviation of all pairwise distances.
double default_gaussian_sigma(const Matrix& dist);

// CSV of an n x m matrix, one row per line, 17 significant digits.
void export_heatmap(const Matrix& m, const std::string& path);

// CSV matrix input (adjacency or distances), no header row.
Matrix load_matrix_csv(const std::string& path);

}  // namespace gwnet
