#include "gwnet/layers.hpp"

#include "gwnet/errors.hpp"

namespace gwnet {

AdjacencyMode adjacency_mode_from_string(const std::string& s) {
  if (s == "identity-only") return AdjacencyMode::kIdentityOnly;
  if (s == "forward-only") return AdjacencyMode::kForwardOnly;
  if (s == "adaptive-only") return AdjacencyMode::kAdaptiveOnly;
  if (s == "forward-backward") return AdjacencyMode::kForwardBackward;
  if (s == "forward-backward-adaptive") return AdjacencyMode::kForwardBackwardAdaptive;
  throw ConfigError("unknown adjacency_mode '" + s + "'");
}

std::string to_string(AdjacencyMode m) {
  switch (m) {
    case AdjacencyMode::kIdentityOnly: return "identity-only";
    case AdjacencyMode::kForwardOnly: return "forward-only";
    case AdjacencyMode::kAdaptiveOnly: return "adaptive-only";
    case AdjacencyMode::kForwardBackward: return "forward-backward";
    case AdjacencyMode::kForwardBackwardAdaptive: return "forward-backward-adaptive";
  }
  throw ConfigError("invalid adjacency mode value");
}

bool mode_needs_graph(AdjacencyMode m) {
  return m == AdjacencyMode::kForwardOnly || m == AdjacencyMode::kForwardBackward ||
         m == AdjacencyMode::kForwardBackwardAdaptive;
}

bool mode_uses_adaptive(AdjacencyMode m) {
  return m == AdjacencyMode::kAdaptiveOnly || m == AdjacencyMode::kForwardBackwardAdaptive;
}

int mode_support_count(AdjacencyMode m) {
  switch (m) {
    case AdjacencyMode::kIdentityOnly:
    case AdjacencyMode::kForwardOnly:
    case AdjacencyMode::kAdaptiveOnly: return 1;
    case AdjacencyMode::kForwardBackward: return 2;
    case AdjacencyMode::kForwardBackwardAdaptive: return 3;
  }
  throw ConfigError("invalid adjacency mode value");
}

int receptive_field(int kernel_size, const std::vector<int>& dilations) {
  if (kernel_size < 1) throw ValidationError("receptive_field: kernel_size must be >= 1");
  if (dilations.empty()) throw ValidationError("receptive_field: dilations must be nonempty");
  int sum = 0;
  for (int d : dilations) {
    if (d < 1) throw ValidationError("receptive_field: dilations must be >= 1");
    sum += d;
  }
  return 1 + (kernel_size - 1) * sum;
}

Tensor GcnLayer::forward(const Tensor& x, const std::vector<Tensor>& supports) const {
  if (supports.size() != weights.size())
    throw ConfigError("gcn: mode " + to_string(mode) + " expects " + std::to_string(weights.size()) +
                      " support matrices, got " + std::to_string(supports.size()));
  Tensor out;
  for (std::size_t s = 0; s < supports.size(); ++s) {
    const auto& ws = weights[s];
    Tensor mixed = x;  // power 0: identity term
    for (int p = 0; p <= k; ++p) {
      if (p > 0) mixed = graph_mix(mixed, supports[s]);
      Tensor term = channel_project(mixed, ws[static_cast<std::size_t>(p)]);
      out = out.defined() ? add(out, term) : term;
    }
  }
  return out;
}

std::pair<Tensor, Tensor> StLayer::forward(const Tensor& x, const std::vector<Tensor>& supports, double dropout_p,
                                           bool train_mode, std::mt19937_64& rng) const {
  Tensor g = gated.forward(x, /*padded=*/false);
  Tensor h = gcn.forward(g, supports);
  if (train_mode && dropout_p > 0.0) h = dropout(h, dropout_p, rng);

  Tensor res = tail_time(x, h.dim(3));
  if (residual_proj) res = residual_proj->forward(res);
  if (res.dim(1) != h.dim(1))
    throw DimensionError("st layer: residual channels " + std::to_string(res.dim(1)) +
                         " do not match block output channels " + std::to_string(h.dim(1)));
  Tensor out = add(h, res);
  Tensor skip = skip_proj.forward(h);
  return {out, skip};
}

}  // namespace gwnet
