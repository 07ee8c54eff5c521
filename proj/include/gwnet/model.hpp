#pragma once

// Whole-network assembly: input projection, stacked spatial-temporal layers,
// and the output head that emits the full forecast horizon in one pass.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/graph.hpp"
#include "gwnet/layers.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

struct ModelConfig {
  int num_layers = 8;
  std::vector<int> dilations = {1, 2, 1, 2, 1, 2, 1, 2};
  int kernel_size = 2;
  int residual_channels = 32;
  int dilation_channels = 32;
  int skip_channels = 256;
  int end_channels = 512;
  int gcn_k = 2;
  AdjacencyMode adjacency_mode = AdjacencyMode::kForwardBackwardAdaptive;
  int input_dim = 1;
  int output_dim = 1;
  int output_horizon = 12;
  int input_window = 12;
  Index nodes = 0;
  int embed_dim = 10;
  double dropout_p = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
  int receptive_field() const { return gwnet::receptive_field(kernel_size, dilations); }

  // Flat `key = value` text; '#' starts a comment.
  static ModelConfig from_text(const std::string& text);
  static ModelConfig from_file(const std::string& path);
  std::string to_text() const;
  // Applies one override; throws ConfigError naming the key when unknown or
  // unparsable.
  void set_key(const std::string& key, const std::string& value);
};

class GraphWaveNet {
 public:
  static GraphWaveNet build(const ModelConfig& cfg, const std::optional<Graph>& graph);

  // x: [B, input_dim, N, S]. S shorter than the receptive field is
  // left-padded with zeros; S longer has its oldest steps dropped with a
  // warning. Returns [B, horizon, N, output_dim].
  Tensor forward(const Tensor& x, bool train_mode);

  // Valid-mode pass over an arbitrary time length: input projection, all
  // spatial-temporal layers, and the skip sum, without the output head.
  // The result keeps one position per full receptive-field window, so
  // causality is observable position by position.
  Tensor features(const Tensor& x, bool train_mode);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  Index parameter_count() const;
  void zero_grad();

  bool has_embeddings() const { return embeddings_.has_value(); }
  const NodeEmbeddings& embeddings() const;

  // Current adaptive adjacency (off tape); requires embeddings.
  Matrix adaptive_matrix() const;

  void save(const std::string& path) const;
  static GraphWaveNet load(const std::string& path);

  // Overwrites parameter values in registry order (optimizer snapshots).
  void set_parameter_values(const std::vector<std::vector<double>>& values);
  std::vector<std::vector<double>> parameter_values() const;

 private:
  GraphWaveNet() = default;
  void assemble(const ModelConfig& cfg);  // builds layers/params from seed
  std::vector<Tensor> active_supports();  // fixed supports plus adaptive

  ModelConfig cfg_;
  Conv1x1 input_proj_;
  std::vector<StLayer> layers_;
  Conv1x1 head_mid_;
  Conv1x1 head_out_;
  std::optional<NodeEmbeddings> embeddings_;
  std::vector<Tensor> fixed_supports_;  // constants wrapped for graph_mix
  std::vector<std::pair<std::string, Tensor>> params_;
  std::mt19937_64 dropout_rng_;
};

}  // namespace gwnet
