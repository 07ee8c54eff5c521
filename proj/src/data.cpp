#include "gwnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gwnet/errors.hpp"

namespace gwnet {

namespace {

constexpr char kSignalMagic[8] = {'G', 'W', 'N', 'E', 'T', 'S', 'G', '1'};
constexpr std::uint64_t kSignalVersion = 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

SignalStore load_csv_wide(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header row");
  SignalStore store;
  store.node_ids = split_csv_line(line);
  if (store.node_ids.empty()) throw ParseError(path + ":1: empty header row");
  store.n = static_cast<Index>(store.node_ids.size());
  store.d = 1;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const char* p = line.c_str();
    Index col = 0;
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw ParseError(path + ":" + std::to_string(lineno) + ": non-numeric cell");
      store.values.push_back(v);
      ++col;
      p = end;
      while (*p == ' ' || *p == '\t') ++p;
      if (*p == ',') {
        ++p;
        continue;
      }
      if (*p == '\0' || *p == '\r') break;
      throw ParseError(path + ":" + std::to_string(lineno) + ": unexpected character '" + *p + "'");
    }
    if (col != store.n)
      throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row, expected " + std::to_string(store.n) +
                       " cells, got " + std::to_string(col));
    ++store.t_total;
  }
  if (store.t_total == 0) throw ParseError(path + ": no data rows");
  return store;
}

SignalStore load_raw_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSignalMagic, sizeof(magic)) != 0)
    throw ParseError(path + ": not a raw-binary signal file (bad magic)");
  std::uint64_t version = 0, t = 0, n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&version), 8);
  in.read(reinterpret_cast<char*>(&t), 8);
  in.read(reinterpret_cast<char*>(&n), 8);
  in.read(reinterpret_cast<char*>(&d), 8);
  if (!in) throw ParseError(path + ": truncated raw-binary header");
  if (version != kSignalVersion) throw ParseError(path + ": unsupported raw-binary version " + std::to_string(version));
  if (t == 0 || n == 0 || d == 0) throw ParseError(path + ": degenerate raw-binary dimensions");
  SignalStore store;
  store.t_total = static_cast<Index>(t);
  store.n = static_cast<Index>(n);
  store.d = static_cast<Index>(d);
  store.values.resize(t * n * d);
  in.read(reinterpret_cast<char*>(store.values.data()),
          static_cast<std::streamsize>(store.values.size() * sizeof(double)));
  if (!in) throw ParseError(path + ": truncated raw-binary payload");
  store.node_ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) store.node_ids.push_back("n" + std::to_string(i));
  return store;
}

}  // namespace

SignalStore load_signals(const std::string& path, SignalFormat format) {
  return format == SignalFormat::kCsvWide ? load_csv_wide(path) : load_raw_binary(path);
}

SignalStore load_signals_auto(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path);
  char magic[8] = {0};
  probe.read(magic, sizeof(magic));
  if (probe && std::memcmp(magic, kSignalMagic, sizeof(magic)) == 0) return load_raw_binary(path);
  return load_csv_wide(path);
}

void save_signals(const SignalStore& store, const std::string& path, SignalFormat format) {
  if (format == SignalFormat::kRawBinary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kSignalMagic, sizeof(kSignalMagic));
    const std::uint64_t header[4] = {kSignalVersion, static_cast<std::uint64_t>(store.t_total),
                                     static_cast<std::uint64_t>(store.n), static_cast<std::uint64_t>(store.d)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(store.values.data()),
              static_cast<std::streamsize>(store.values.size() * sizeof(double)));
    if (!out) throw IoError("write failure on " + path);
    return;
  }
  if (store.d != 1) throw ValidationError("csv-wide export requires D = 1");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (Index j = 0; j < store.n; ++j) {
    if (j) out << ',';
    out << (j < static_cast<Index>(store.node_ids.size()) ? store.node_ids[static_cast<std::size_t>(j)]
                                                          : "n" + std::to_string(j));
  }
  out << '\n';
  char buf[64];
  for (Index t = 0; t < store.t_total; ++t) {
    for (Index j = 0; j < store.n; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", store.at(t, j, 0));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path);
}

const std::vector<Index>& WindowedDataset::starts(const std::string& split) const {
  if (split == "train") return train_starts;
  if (split == "val") return val_starts;
  if (split == "test") return test_starts;
  throw ContractError("unknown split '" + split + "'");
}

WindowedDataset make_windows(std::shared_ptr<const SignalStore> store, Index s, Index t,
                             std::array<double, 3> ratios) {
  if (s < 1 || t < 1) throw ValidationError("make_windows: window and horizon must be >= 1");
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(rsum - 1.0) > 1e-9) throw ValidationError("make_windows: split ratios must sum to 1");

  WindowedDataset ds;
  ds.store = std::move(store);
  ds.input_window = s;
  ds.horizon = t;
  const Index total = ds.store->t_total;
  ds.train_boundary = static_cast<Index>(std::floor(ratios[0] * static_cast<double>(total)));
  ds.val_boundary = static_cast<Index>(std::floor((ratios[0] + ratios[1]) * static_cast<double>(total)));

  auto collect = [&](Index lo, Index hi, std::vector<Index>& out) {
    for (Index w = lo; w + s + t <= hi; ++w) out.push_back(w);
  };
  collect(0, ds.train_boundary, ds.train_starts);
  collect(ds.train_boundary, ds.val_boundary, ds.val_starts);
  collect(ds.val_boundary, total, ds.test_starts);
  ds.val_empty = ds.val_starts.empty();
  ds.test_empty = ds.test_starts.empty();
  if (ds.train_starts.empty())
    throw ValidationError("make_windows: training span of " + std::to_string(ds.train_boundary) +
                          " steps is too short for one (" + std::to_string(s) + "+" + std::to_string(t) +
                          ")-step window");

  // normalization statistics from valid training readings only
  double sum = 0.0, sumsq = 0.0;
  Index count = 0;
  const auto& st = *ds.store;
  for (Index i = 0; i < ds.train_boundary * st.n * st.d; ++i) {
    const double v = st.values[static_cast<std::size_t>(i)];
    if (v == 0.0) continue;
    sum += v;
    sumsq += v * v;
    ++count;
  }
  if (count > 0) {
    ds.norm.mean = sum / static_cast<double>(count);
    const double var = sumsq / static_cast<double>(count) - ds.norm.mean * ds.norm.mean;
    ds.norm.std = std::sqrt(std::max(var, 0.0));
  }
  ds.norm.std = std::max(ds.norm.std, 1e-8);
  return ds;
}

Batch assemble_batch(const WindowedDataset& data, const std::vector<Index>& starts, std::size_t first,
                     std::size_t count) {
  const auto& st = *data.store;
  const Index B = static_cast<Index>(count), D = st.d, N = st.n, S = data.input_window, T = data.horizon;
  Batch batch;
  batch.input = Tensor({B, D, N, S});
  batch.target_raw = Tensor({B, T, N, D});
  batch.mask = Tensor({B, T, N, D});
  for (Index b = 0; b < B; ++b) {
    const Index w = starts[first + static_cast<std::size_t>(b)];
    for (Index dch = 0; dch < D; ++dch)
      for (Index nd = 0; nd < N; ++nd)
        for (Index l = 0; l < S; ++l)
          batch.input.at({b, dch, nd, l}) = (st.at(w + l, nd, dch) - data.norm.mean) / data.norm.std;
    for (Index h = 0; h < T; ++h)
      for (Index nd = 0; nd < N; ++nd)
        for (Index dch = 0; dch < D; ++dch) {
          const double v = st.at(w + S + h, nd, dch);
          batch.target_raw.at({b, h, nd, dch}) = v;
          batch.mask.at({b, h, nd, dch}) = v != 0.0 ? 1.0 : 0.0;
        }
  }
  return batch;
}

std::pair<SignalStore, Graph> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.edge_prob <= 0.0 || spec.edge_prob >= 1.0)
    throw ValidationError("generate_synthetic: edge_prob must lie in (0,1)");
  if (spec.noise_std < 0.0) throw ValidationError("generate_synthetic: noise_std must be >= 0");
  if (spec.n < 2 || spec.steps < 2) throw ValidationError("generate_synthetic: need n >= 2 and steps >= 2");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Matrix a = Matrix::Zero(spec.n, spec.n);
  for (Index i = 0; i < spec.n; ++i)
    for (Index j = 0; j < spec.n; ++j)
      if (i != j && uni(rng) < spec.edge_prob) a(i, j) = 1.0;
  Graph g(std::move(a), /*directed=*/true);
  const Matrix pf = row_normalize(g.adjacency);

  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::VectorXd x(spec.n);
  for (Index i = 0; i < spec.n; ++i) x(i) = uni(rng);

  SignalStore store;
  store.t_total = spec.steps;
  store.n = spec.n;
  store.d = 1;
  store.values.resize(static_cast<std::size_t>(spec.steps * spec.n));
  store.node_ids.reserve(static_cast<std::size_t>(spec.n));
  for (Index i = 0; i < spec.n; ++i) store.node_ids.push_back("n" + std::to_string(i));

  for (Index t = 0; t < spec.steps; ++t) {
    for (Index i = 0; i < spec.n; ++i) store.values[static_cast<std::size_t>(t * spec.n + i)] = x(i);
    Eigen::VectorXd next = 0.9 * (pf * x) + 0.1 * x;
    for (Index i = 0; i < spec.n; ++i) next(i) += spec.noise_std * noise(rng);
    x = next;
  }
  return {std::move(store), std::move(g)};
}

double edge_recovery_score(const Matrix& learned, const Graph& truth, std::uint64_t tie_seed) {
  if (learned.rows() != truth.n || learned.cols() != truth.n)
    throw DimensionError("edge_recovery_score: learned matrix is " + std::to_string(learned.rows()) + "x" +
                         std::to_string(learned.cols()) + ", graph has " + std::to_string(truth.n) + " nodes");
  struct Entry {
    double value;
    std::uint64_t tiebreak;
    Index i, j;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(truth.n * (truth.n - 1)));
  std::mt19937_64 rng(tie_seed);
  for (Index i = 0; i < truth.n; ++i)
    for (Index j = 0; j < truth.n; ++j)
      if (i != j) entries.push_back({learned(i, j), rng(), i, j});
  const Index e_true = truth.edge_count();
  if (e_true == 0) return 1.0;
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.tiebreak < b.tiebreak;
  });
  Index hits = 0;
  for (Index r = 0; r < e_true; ++r) {
    const auto& e = entries[static_cast<std::size_t>(r)];
    if (truth.adjacency(e.i, e.j) > 0.0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(e_true);
}

}  // namespace gwnet
