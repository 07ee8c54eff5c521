#include "gwnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gwnet/errors.hpp"

namespace gwnet {

namespace {

constexpr char kCheckpointMagic[8] = {'G', 'W', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse integer '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

long long parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(trim(v), &pos);
    if (pos != trim(v).size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(trim(v), &pos);
    if (pos != trim(v).size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + v + "'");
  }
}

double uniform_symmetric(std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> uni(-bound, bound);
  return uni(rng);
}

void init_uniform_fanin(Tensor& t, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < t.numel(); ++i) t[i] = uniform_symmetric(rng, bound);
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(in);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("config key 'num_layers': must be >= 1");
  if (static_cast<int>(dilations.size()) != num_layers)
    throw ConfigError("config key 'dilations': got " + std::to_string(dilations.size()) + " entries for " +
                      std::to_string(num_layers) + " layers");
  for (int d : dilations)
    if (d < 1) throw ConfigError("config key 'dilations': entries must be >= 1");
  if (kernel_size < 1) throw ConfigError("config key 'kernel_size': must be >= 1");
  if (residual_channels < 1 || dilation_channels < 1 || skip_channels < 1 || end_channels < 1)
    throw ConfigError("config key '*_channels': all channel counts must be >= 1");
  if (gcn_k < 0) throw ConfigError("config key 'gcn_k': must be >= 0");
  if (input_dim < 1 || output_dim < 1) throw ConfigError("config key 'input_dim'/'output_dim': must be >= 1");
  if (output_horizon < 1) throw ConfigError("config key 'output_horizon': must be >= 1");
  if (input_window < 1) throw ConfigError("config key 'input_window': must be >= 1");
  if (nodes < 1) throw ConfigError("config key 'nodes': must be >= 1");
  if (embed_dim < 1) throw ConfigError("config key 'embed_dim': must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("config key 'dropout_p': must lie in [0,1)");
}

void ModelConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "num_layers") num_layers = static_cast<int>(parse_int(value, key));
  else if (key == "dilations") dilations = parse_int_list(value, key);
  else if (key == "kernel_size") kernel_size = static_cast<int>(parse_int(value, key));
  else if (key == "residual_channels") residual_channels = static_cast<int>(parse_int(value, key));
  else if (key == "dilation_channels") dilation_channels = static_cast<int>(parse_int(value, key));
  else if (key == "skip_channels") skip_channels = static_cast<int>(parse_int(value, key));
  else if (key == "end_channels") end_channels = static_cast<int>(parse_int(value, key));
  else if (key == "gcn_k") gcn_k = static_cast<int>(parse_int(value, key));
  else if (key == "adjacency_mode") adjacency_mode = adjacency_mode_from_string(trim(value));
  else if (key == "input_dim") input_dim = static_cast<int>(parse_int(value, key));
  else if (key == "output_dim") output_dim = static_cast<int>(parse_int(value, key));
  else if (key == "output_horizon") output_horizon = static_cast<int>(parse_int(value, key));
  else if (key == "input_window") input_window = static_cast<int>(parse_int(value, key));
  else if (key == "nodes") nodes = parse_int(value, key);
  else if (key == "embed_dim") embed_dim = static_cast<int>(parse_int(value, key));
  else if (key == "dropout_p") dropout_p = parse_double(value, key);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(value, key));
  else throw ConfigError("unknown config key '" + key + "'");
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ModelConfig ModelConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "num_layers = " << num_layers << '\n';
  os << "dilations = ";
  for (std::size_t i = 0; i < dilations.size(); ++i) os << (i ? "," : "") << dilations[i];
  os << '\n';
  os << "kernel_size = " << kernel_size << '\n';
  os << "residual_channels = " << residual_channels << '\n';
  os << "dilation_channels = " << dilation_channels << '\n';
  os << "skip_channels = " << skip_channels << '\n';
  os << "end_channels = " << end_channels << '\n';
  os << "gcn_k = " << gcn_k << '\n';
  os << "adjacency_mode = " << to_string(adjacency_mode) << '\n';
  os << "input_dim = " << input_dim << '\n';
  os << "output_dim = " << output_dim << '\n';
  os << "output_horizon = " << output_horizon << '\n';
  os << "input_window = " << input_window << '\n';
  os << "nodes = " << nodes << '\n';
  os << "embed_dim = " << embed_dim << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", dropout_p);
  os << "dropout_p = " << buf << '\n';
  os << "seed = " << seed << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// GraphWaveNet

void GraphWaveNet::assemble(const ModelConfig& cfg) {
  cfg_ = cfg;
  cfg_.validate();
  params_.clear();
  layers_.clear();

  std::mt19937_64 rng(cfg_.seed);
  dropout_rng_.seed(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);

  auto make_param = [&](const std::string& name, Shape shape, Index fan_in) {
    Tensor t(std::move(shape));
    init_uniform_fanin(t, fan_in, rng);
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
  };

  const Index D = cfg_.input_dim, R = cfg_.residual_channels, C = cfg_.dilation_channels;
  const Index S = cfg_.skip_channels, E = cfg_.end_channels, ks = cfg_.kernel_size;

  input_proj_.weight = make_param("input_proj.weight", {D, R}, D);
  input_proj_.bias = make_param("input_proj.bias", {R}, D);

  const int n_supports = mode_support_count(cfg_.adjacency_mode);
  for (int i = 0; i < cfg_.num_layers; ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    StLayer layer;
    layer.gated.filter.kernel = make_param(prefix + "filter.kernel", {C, R, ks}, R * ks);
    layer.gated.filter.bias = make_param(prefix + "filter.bias", {C}, R * ks);
    layer.gated.filter.dilation = cfg_.dilations[static_cast<std::size_t>(i)];
    layer.gated.gate.kernel = make_param(prefix + "gate.kernel", {C, R, ks}, R * ks);
    layer.gated.gate.bias = make_param(prefix + "gate.bias", {C}, R * ks);
    layer.gated.gate.dilation = layer.gated.filter.dilation;

    layer.gcn.mode = cfg_.adjacency_mode;
    layer.gcn.k = cfg_.gcn_k;
    layer.gcn.weights.resize(static_cast<std::size_t>(n_supports));
    for (int s = 0; s < n_supports; ++s)
      for (int p = 0; p <= cfg_.gcn_k; ++p)
        layer.gcn.weights[static_cast<std::size_t>(s)].push_back(
            make_param(prefix + "gcn.s" + std::to_string(s) + ".k" + std::to_string(p), {C, R}, C));

    layer.skip_proj.weight = make_param(prefix + "skip.weight", {R, S}, R);
    layer.skip_proj.bias = make_param(prefix + "skip.bias", {S}, R);
    layers_.push_back(std::move(layer));
  }

  head_mid_.weight = make_param("head.mid.weight", {S, E}, S);
  head_mid_.bias = make_param("head.mid.bias", {E}, S);
  const Index head_out_ch = static_cast<Index>(cfg_.output_horizon) * cfg_.output_dim;
  head_out_.weight = make_param("head.out.weight", {E, head_out_ch}, E);
  head_out_.bias = make_param("head.out.bias", {head_out_ch}, E);

  if (mode_uses_adaptive(cfg_.adjacency_mode)) {
    NodeEmbeddings e;
    e.dim = cfg_.embed_dim;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    e.source = Tensor({cfg_.nodes, cfg_.embed_dim});
    for (Index i = 0; i < e.source.numel(); ++i) e.source[i] = uni(rng);
    e.source.set_requires_grad(true);
    e.target = Tensor({cfg_.nodes, cfg_.embed_dim});
    for (Index i = 0; i < e.target.numel(); ++i) e.target[i] = uni(rng);
    e.target.set_requires_grad(true);
    params_.emplace_back("embeddings.source", e.source);
    params_.emplace_back("embeddings.target", e.target);
    embeddings_ = std::move(e);
  } else {
    embeddings_.reset();
  }
}

GraphWaveNet GraphWaveNet::build(const ModelConfig& cfg, const std::optional<Graph>& graph) {
  cfg.validate();
  if (mode_needs_graph(cfg.adjacency_mode) && !graph)
    throw ConfigError("adjacency_mode " + to_string(cfg.adjacency_mode) + " requires a graph");
  if (graph && graph->n != cfg.nodes)
    throw ConfigError("config key 'nodes': " + std::to_string(cfg.nodes) + " does not match graph with " +
                      std::to_string(graph->n) + " nodes");

  GraphWaveNet m;
  m.assemble(cfg);

  switch (cfg.adjacency_mode) {
    case AdjacencyMode::kIdentityOnly:
      m.fixed_supports_.push_back(tensor_from_matrix(Matrix::Identity(cfg.nodes, cfg.nodes)));
      break;
    case AdjacencyMode::kForwardOnly: {
      const TransitionSet ts = build_transitions(*graph, cfg.gcn_k);
      m.fixed_supports_.push_back(tensor_from_matrix(ts.forward));
      break;
    }
    case AdjacencyMode::kForwardBackward:
    case AdjacencyMode::kForwardBackwardAdaptive: {
      const TransitionSet ts = build_transitions(*graph, cfg.gcn_k);
      m.fixed_supports_.push_back(tensor_from_matrix(ts.forward));
      // undirected graphs diffuse identically in both directions
      m.fixed_supports_.push_back(tensor_from_matrix(ts.backward ? *ts.backward : ts.forward));
      break;
    }
    case AdjacencyMode::kAdaptiveOnly: break;
  }
  return m;
}

std::vector<Tensor> GraphWaveNet::active_supports() {
  std::vector<Tensor> supports = fixed_supports_;
  if (mode_uses_adaptive(cfg_.adjacency_mode)) supports.push_back(adaptive_adjacency(*embeddings_));
  return supports;
}

Tensor GraphWaveNet::features(const Tensor& x, bool train_mode) {
  if (x.rank() != 4)
    throw DimensionError("features: expected [B,D,N,L] input, got " + shape_to_string(x.shape()));
  if (x.dim(1) != cfg_.input_dim || x.dim(2) != cfg_.nodes)
    throw DimensionError("features: input " + shape_to_string(x.shape()) + " does not match input_dim=" +
                         std::to_string(cfg_.input_dim) + ", nodes=" + std::to_string(cfg_.nodes));
  const int rf = cfg_.receptive_field();
  if (x.dim(3) < rf)
    throw DimensionError("features: time length " + std::to_string(x.dim(3)) + " shorter than receptive field " +
                         std::to_string(rf));
  const Index final_len = x.dim(3) - (rf - 1);

  std::vector<Tensor> supports = active_supports();
  Tensor h = input_proj_.forward(x);
  Tensor skip_sum;
  for (const auto& layer : layers_) {
    auto [out, skip] = layer.forward(h, supports, cfg_.dropout_p, train_mode, dropout_rng_);
    h = out;
    Tensor cropped = tail_time(skip, final_len);
    skip_sum = skip_sum.defined() ? add(skip_sum, cropped) : cropped;
  }
  return skip_sum;
}

Tensor GraphWaveNet::forward(const Tensor& x, bool train_mode) {
  if (x.rank() != 4)
    throw DimensionError("forward: expected [B,D,N,S] input, got " + shape_to_string(x.shape()));
  if (x.dim(3) > cfg_.input_window)
    throw DimensionError("forward: input length " + std::to_string(x.dim(3)) + " exceeds input_window " +
                         std::to_string(cfg_.input_window));
  const int rf = cfg_.receptive_field();
  Tensor in = x;
  if (x.dim(3) < rf) {
    in = pad_time_left(x, rf - x.dim(3));
  } else if (x.dim(3) > rf) {
    std::cerr << "warning: input length " << x.dim(3) << " exceeds receptive field " << rf
              << "; older steps are ignored\n";
    in = tail_time(x, rf);
  }
  Tensor h = features(in, train_mode);
  h = relu(h);
  h = head_mid_.forward(h);
  h = relu(h);
  h = head_out_.forward(h);
  return reshape_horizon(h, cfg_.output_horizon, cfg_.output_dim);
}

std::vector<Tensor> GraphWaveNet::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

Index GraphWaveNet::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void GraphWaveNet::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor tt = t;
    tt.zero_grad();
  }
}

const NodeEmbeddings& GraphWaveNet::embeddings() const {
  if (!embeddings_) throw ConfigError("model mode " + to_string(cfg_.adjacency_mode) + " has no node embeddings");
  return *embeddings_;
}

Matrix GraphWaveNet::adaptive_matrix() const {
  Tape::Pause pause;
  return matrix_from_tensor(adaptive_adjacency(embeddings()));
}

void GraphWaveNet::set_parameter_values(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size())
    throw ContractError("set_parameter_values: expected " + std::to_string(params_.size()) + " tensors");
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor t = params_[i].second;
    if (static_cast<Index>(values[i].size()) != t.numel())
      throw ContractError("set_parameter_values: size mismatch at " + params_[i].first);
    std::copy(values[i].begin(), values[i].end(), t.data());
  }
}

std::vector<std::vector<double>> GraphWaveNet::parameter_values() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t.values());
  return out;
}

void GraphWaveNet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, kCheckpointVersion);
  const std::string cfg_text = cfg_.to_text();
  write_pod(out, static_cast<std::uint64_t>(cfg_text.size()));
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_pod(out, static_cast<std::uint64_t>(params_.size()));
  for (const auto& [name, t] : params_)
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  write_pod(out, static_cast<std::uint64_t>(fixed_supports_.size()));
  for (const auto& s : fixed_supports_) {
    write_pod(out, static_cast<std::uint64_t>(s.dim(0)));
    write_pod(out, static_cast<std::uint64_t>(s.dim(1)));
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.numel() * sizeof(double)));
  }
  if (!out) throw IoError("write failure on " + path);
}

GraphWaveNet GraphWaveNet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("corrupt checkpoint " + path + ": bad magic string");
  std::uint32_t version = 0;
  if (!read_pod(in, version) || version != kCheckpointVersion)
    throw CheckpointError("corrupt checkpoint " + path + ": unsupported version " + std::to_string(version));
  std::uint64_t cfg_len = 0;
  if (!read_pod(in, cfg_len)) throw CheckpointError("corrupt checkpoint " + path + ": truncated config length");
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw CheckpointError("corrupt checkpoint " + path + ": truncated config block");

  GraphWaveNet m;
  m.assemble(ModelConfig::from_text(cfg_text));

  std::uint64_t n_params = 0;
  if (!read_pod(in, n_params)) throw CheckpointError("corrupt checkpoint " + path + ": truncated parameter count");
  if (n_params != m.params_.size())
    throw CheckpointError("corrupt checkpoint " + path + ": expected " + std::to_string(m.params_.size()) +
                          " parameters, found " + std::to_string(n_params));
  for (auto& [name, t] : m.params_) {
    Tensor tt = t;
    in.read(reinterpret_cast<char*>(tt.data()), static_cast<std::streamsize>(tt.numel() * sizeof(double)));
    if (!in) throw CheckpointError("corrupt checkpoint " + path + ": truncated at parameter '" + name + "'");
  }

  std::uint64_t n_supports = 0;
  if (!read_pod(in, n_supports)) throw CheckpointError("corrupt checkpoint " + path + ": truncated support count");
  for (std::uint64_t i = 0; i < n_supports; ++i) {
    std::uint64_t rows = 0, cols = 0;
    if (!read_pod(in, rows) || !read_pod(in, cols))
      throw CheckpointError("corrupt checkpoint " + path + ": truncated support header");
    if (rows != static_cast<std::uint64_t>(m.cfg_.nodes) || cols != rows)
      throw CheckpointError("corrupt checkpoint " + path + ": support matrix " + std::to_string(i) +
                            " has shape " + std::to_string(rows) + "x" + std::to_string(cols));
    Tensor s({static_cast<Index>(rows), static_cast<Index>(cols)});
    in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.numel() * sizeof(double)));
    if (!in) throw CheckpointError("corrupt checkpoint " + path + ": truncated support matrix " + std::to_string(i));
    m.fixed_supports_.push_back(std::move(s));
  }
  const std::size_t expected_fixed =
      static_cast<std::size_t>(mode_support_count(m.cfg_.adjacency_mode)) - (mode_uses_adaptive(m.cfg_.adjacency_mode) ? 1 : 0);
  if (m.fixed_supports_.size() != expected_fixed)
    throw CheckpointError("corrupt checkpoint " + path + ": mode " + to_string(m.cfg_.adjacency_mode) +
                          " expects " + std::to_string(expected_fixed) + " stored supports, found " +
                          std::to_string(m.fixed_supports_.size()));
  return m;
}

}  // namespace gwnet
