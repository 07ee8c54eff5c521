#include "gwnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "gwnet/errors.hpp"
#include "gwnet/nn_ops.hpp"

namespace gwnet {

double normalize_value(double x, const NormStats& stats) { return (x - stats.mean) / stats.std; }
double denormalize_value(double y, const NormStats& stats) { return y * stats.std + stats.mean; }

Tensor normalize(const Tensor& x, const NormStats& stats) {
  Tensor out(x.shape());
  for (Index i = 0; i < x.numel(); ++i) out[i] = (x[i] - stats.mean) / stats.std;
  return out;
}

Tensor denormalize(const Tensor& y, const NormStats& stats) {
  Tensor out(y.shape());
  for (Index i = 0; i < y.numel(); ++i) out[i] = y[i] * stats.std + stats.mean;
  return out;
}

// ---------------------------------------------------------------------------
// metrics

MetricsAccumulator::MetricsAccumulator(Index horizon)
    : abs_(static_cast<std::size_t>(horizon), 0.0),
      sq_(static_cast<std::size_t>(horizon), 0.0),
      ape_(static_cast<std::size_t>(horizon), 0.0),
      count_(static_cast<std::size_t>(horizon), 0),
      mape_count_(static_cast<std::size_t>(horizon), 0) {}

void MetricsAccumulator::add(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw DimensionError("metrics: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                         shape_to_string(target.shape()));
  if (pred.rank() != 4 || pred.dim(1) != static_cast<Index>(abs_.size()))
    throw DimensionError("metrics: expected [B," + std::to_string(abs_.size()) + ",N,D], got " +
                         shape_to_string(pred.shape()));
  const Index B = pred.dim(0), T = pred.dim(1), N = pred.dim(2), D = pred.dim(3);
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < T; ++t) {
      const std::size_t ht = static_cast<std::size_t>(t);
      for (Index n = 0; n < N; ++n)
        for (Index d = 0; d < D; ++d) {
          const Index i = ((b * T + t) * N + n) * D + d;
          if (mask[i] == 0.0) continue;
          const double e = pred[i] - target[i];
          abs_[ht] += std::abs(e);
          sq_[ht] += e * e;
          ++count_[ht];
          if (target[i] != 0.0) {
            ape_[ht] += std::abs(e / target[i]);
            ++mape_count_[ht];
          }
        }
    }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  if (other.abs_.size() != abs_.size()) throw ContractError("metrics merge: horizon mismatch");
  for (std::size_t t = 0; t < abs_.size(); ++t) {
    abs_[t] += other.abs_[t];
    sq_[t] += other.sq_[t];
    ape_[t] += other.ape_[t];
    count_[t] += other.count_[t];
    mape_count_[t] += other.mape_count_[t];
  }
}

MetricReport MetricsAccumulator::report() const {
  MetricReport r;
  const std::size_t T = abs_.size();
  r.mae.resize(T);
  r.rmse.resize(T);
  r.mape.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double c = static_cast<double>(count_[t]);
    r.mae[t] = count_[t] ? abs_[t] / c : 0.0;
    r.rmse[t] = count_[t] ? std::sqrt(sq_[t] / c) : 0.0;
    r.mape[t] = mape_count_[t] ? 100.0 * ape_[t] / static_cast<double>(mape_count_[t]) : 0.0;
    r.mean_mae += r.mae[t];
    r.mean_rmse += r.rmse[t];
    r.mean_mape += r.mape[t];
  }
  r.mean_mae /= static_cast<double>(T);
  r.mean_rmse /= static_cast<double>(T);
  r.mean_mape /= static_cast<double>(T);
  return r;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    if (static_cast<Index>(m.size()) != p.numel())
      throw ContractError("adam: moment buffer does not match parameter " + std::to_string(i));
    const auto& g = p.grad_buffer();  // never-touched gradients count as zero
    double* pv = p.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      pv[j] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// evaluation helpers

namespace {

// Normalized targets; masked-out entries are zeroed.
Tensor normalized_targets(const Batch& batch, const NormStats& stats) {
  Tensor out(batch.target_raw.shape());
  for (Index i = 0; i < out.numel(); ++i)
    out[i] = batch.mask[i] != 0.0 ? normalize_value(batch.target_raw[i], stats) : 0.0;
  return out;
}

Index mask_valid_count(const Tensor& mask) {
  Index c = 0;
  for (Index i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.0) ++c;
  return c;
}

double grad_global_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void scale_grads(std::vector<Tensor>& params, double factor) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    Tensor t = p;
    for (auto& g : t.grad_buffer()) g *= factor;
  }
}

}  // namespace

double evaluate_split_loss(GraphWaveNet& model, const WindowedDataset& data, const std::vector<Index>& starts,
                           int batch_size) {
  Tape::Pause pause;
  double abs_sum = 0.0;
  Index valid = 0;
  for (std::size_t first = 0; first < starts.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), starts.size() - first);
    Batch batch = assemble_batch(data, starts, first, count);
    Tensor pred = model.forward(batch.input, /*train_mode=*/false);
    Tensor tnorm = normalized_targets(batch, data.norm);
    const Index batch_valid = mask_valid_count(batch.mask);
    if (batch_valid == 0) continue;
    abs_sum += masked_mae(pred, tnorm, batch.mask).item() * static_cast<double>(batch_valid);
    valid += batch_valid;
  }
  return valid ? abs_sum / static_cast<double>(valid) : 0.0;
}

MetricReport evaluate_split_metrics(GraphWaveNet& model, const WindowedDataset& data,
                                    const std::vector<Index>& starts, int batch_size) {
  Tape::Pause pause;
  MetricsAccumulator acc(data.horizon);
  for (std::size_t first = 0; first < starts.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), starts.size() - first);
    Batch batch = assemble_batch(data, starts, first, count);
    Tensor pred = model.forward(batch.input, /*train_mode=*/false);
    acc.add(denormalize(pred, data.norm), batch.target_raw, batch.mask);
  }
  return acc.report();
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train_loop(GraphWaveNet& model, const WindowedDataset& data, const TrainOptions& opt) {
  if (opt.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (opt.max_epochs < 1) throw ValidationError("train: max_epochs must be >= 1");
  if (opt.patience < 0) throw ValidationError("train: patience must be >= 0");

  std::vector<Tensor> params = model.parameter_tensors();
  Adam adam(params, AdamOptions{opt.lr, opt.beta1, opt.beta2, opt.adam_eps});
  std::mt19937_64 shuffle_rng(opt.shuffle_seed);

  TrainResult result;
  result.initial_train_mae = evaluate_split_loss(model, data, data.train_starts, opt.batch_size);
  result.best_params = model.parameter_values();
  result.best_epoch = 0;

  auto& tape = Tape::current();
  std::vector<Index> order = data.train_starts;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double abs_sum = 0.0;
    Index valid = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t count = std::min(static_cast<std::size_t>(opt.batch_size), order.size() - first);
      Batch batch = assemble_batch(data, order, first, count);
      Tensor pred = model.forward(batch.input, /*train_mode=*/true);
      Tensor tnorm = normalized_targets(batch, data.norm);
      Tensor loss = masked_mae(pred, tnorm, batch.mask);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      const Index batch_valid = mask_valid_count(batch.mask);
      abs_sum += loss_value * static_cast<double>(batch_valid);
      valid += batch_valid;

      tape.backward(loss);
      if (opt.clip_gradients) {
        const double norm = grad_global_norm(params);
        if (norm > opt.clip_norm && norm > 0.0) scale_grads(params, opt.clip_norm / norm);
      }
      adam.step();
      model.zero_grad();
      tape.clear();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = valid ? abs_sum / static_cast<double>(valid) : 0.0;
    double score = rec.train_mae;
    if (!data.val_empty) {
      const MetricReport val = evaluate_split_metrics(model, data, data.val_starts, opt.batch_size);
      rec.val_mae = val.mean_mae;
      rec.val_rmse = val.mean_rmse;
      rec.val_mape = val.mean_mape;
      score = val.mean_mae;
    } else {
      rec.val_mae = rec.val_rmse = rec.val_mape = std::numeric_limits<double>::quiet_NaN();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    result.history.push_back(rec);
    if (opt.verbose)
      std::fprintf(stderr, "epoch %3d  train %.6f  val %.6f  (%.2fs)\n", epoch, rec.train_mae, rec.val_mae,
                   rec.seconds);

    if (score < result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
      result.best_params = model.parameter_values();
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs > opt.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace gwnet
