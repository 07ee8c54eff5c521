#pragma once

// The four layer types of the network: diffusion graph convolution, dilated
// causal convolution, the gated temporal pair, and the composed
// spatial-temporal block with residual and skip connections.

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/graph.hpp"
#include "gwnet/nn_ops.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

enum class AdjacencyMode {
  kIdentityOnly,
  kForwardOnly,
  kAdaptiveOnly,
  kForwardBackward,
  kForwardBackwardAdaptive,
};

AdjacencyMode adjacency_mode_from_string(const std::string& s);
std::string to_string(AdjacencyMode m);
bool mode_needs_graph(AdjacencyMode m);
bool mode_uses_adaptive(AdjacencyMode m);
int mode_support_count(AdjacencyMode m);

// 1 + (kernel_size - 1) * sum(dilations): trailing input steps that can
// reach the final output position.
int receptive_field(int kernel_size, const std::vector<int>& dilations);

// kernel_size-1 convolution along time; channel projection plus bias.
struct Conv1x1 {
  Tensor weight;  // [C_in, C_out]
  Tensor bias;    // [C_out]

  Tensor forward(const Tensor& x) const { return add_channel_bias(channel_project(x, weight), bias); }
};

struct DilatedConv {
  Tensor kernel;  // [C_out, C_in, kernel_size]
  Tensor bias;    // [C_out]
  Index dilation = 1;

  Tensor forward(const Tensor& x, bool padded) const {
    return dilated_causal_conv(x, kernel, bias, dilation, padded);
  }
};

// tanh(filter path) ⊙ sigmoid(gate path); both paths share dilation and
// kernel size.
struct GatedTcn {
  DilatedConv filter;
  DilatedConv gate;

  Tensor forward(const Tensor& x, bool padded = false) const {
    return mul(tanh(filter.forward(x, padded)), sigmoid(gate.forward(x, padded)));
  }
};

// Per time slice: sum over supports s and powers k of (s^k X) W[s][k].
// The k=0 term is the identity for every support. Support matrices arrive
// from the caller so the adaptive matrix can stay on the tape.
struct GcnLayer {
  AdjacencyMode mode = AdjacencyMode::kForwardOnly;
  int k = 2;
  std::vector<std::vector<Tensor>> weights;  // [support][power 0..k], each [C_in, C_out]

  Tensor forward(const Tensor& x, const std::vector<Tensor>& supports) const;
};

struct StLayer {
  GatedTcn gated;
  GcnLayer gcn;
  std::optional<Conv1x1> residual_proj;
  Conv1x1 skip_proj;

  // Returns (block output, skip contribution). Dropout hits the graph
  // convolution output when train_mode is set and p > 0.
  std::pair<Tensor, Tensor> forward(const Tensor& x, const std::vector<Tensor>& supports, double dropout_p,
                                    bool train_mode, std::mt19937_64& rng) const;
};

}  // namespace gwnet
