#pragma once

// Dataset ingestion and windowing. Readings are [T_total, N, D] row-major;
// a raw value of exactly 0.0 marks a missing sensor reading, and the mask
// derived from it travels with every sample from load time onward.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/graph.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

struct SignalStore {
  Index t_total = 0;
  Index n = 0;
  Index d = 1;
  std::vector<double> values;  // [T_total, N, D]
  std::vector<std::string> node_ids;

  double at(Index t, Index node, Index dim) const { return values[(t * n + node) * d + dim]; }
  bool valid(Index t, Index node, Index dim) const { return at(t, node, dim) != 0.0; }
};

enum class SignalFormat { kCsvWide, kRawBinary };

// csv-wide: header row of node ids, then one row of N readings per timestep
// (D = 1). raw-binary: magic, version, T_total, N, D as little-endian 64-bit
// integers, then values row-major as 64-bit floats.
SignalStore load_signals(const std::string& path, SignalFormat format);
// Sniffs raw-binary by magic bytes, falls back to csv-wide.
SignalStore load_signals_auto(const std::string& path);
void save_signals(const SignalStore& store, const std::string& path, SignalFormat format);

struct NormStats {
  double mean = 0.0;
  double std = 1.0;  // population std, floored at 1e-8
};

// Windowed view over a store: sample i of a split covers input steps
// [start, start+s) and target steps [start+s, start+s+t), all inside that
// split's chronological span.
struct WindowedDataset {
  std::shared_ptr<const SignalStore> store;
  Index input_window = 0;   // S
  Index horizon = 0;        // T
  Index train_boundary = 0; // first raw index past the training span
  Index val_boundary = 0;   // first raw index past the validation span
  std::vector<Index> train_starts;
  std::vector<Index> val_starts;
  std::vector<Index> test_starts;
  bool val_empty = true;
  bool test_empty = true;
  NormStats norm;

  const std::vector<Index>& starts(const std::string& split) const;
};

WindowedDataset make_windows(std::shared_ptr<const SignalStore> store, Index s, Index t,
                             std::array<double, 3> ratios = {0.7, 0.1, 0.2});

// Batch tensors for the samples at `starts[first, first+count)`:
//   input  [B, D, N, S]   z-scored readings
//   target [B, T, N, D]   raw readings
//   mask   [B, T, N, D]   1 where the target is a real reading
struct Batch {
  Tensor input;
  Tensor target_raw;
  Tensor mask;
};
Batch assemble_batch(const WindowedDataset& data, const std::vector<Index>& starts, std::size_t first,
                     std::size_t count);

// Linear diffusion process on a random directed graph:
//   x(t+1) = 0.9 P_f x(t) + 0.1 x(t) + eps,  eps ~ N(0, noise_std^2)
// from a uniform [0,1) initial state. The spectral radius of the update stays
// at most 1, so the series is bounded while the graph remains identifiable.
struct SyntheticSpec {
  Index n = 10;
  double edge_prob = 0.3;
  double noise_std = 0.01;
  Index steps = 2000;
  std::uint64_t seed = 1;
};

std::pair<SignalStore, Graph> generate_synthetic(const SyntheticSpec& spec);

// Fraction of true directed edges found among the |E_true| largest
// off-diagonal entries of `learned`. Equal entries are ordered by a seeded
// shuffle so uniform matrices score at chance level.
double edge_recovery_score(const Matrix& learned, const Graph& truth, std::uint64_t tie_seed = 0);

}  // namespace gwnet
