#pragma once

// Optimization and evaluation: masked MAE objective, Adam, the metric suite
// computed on de-normalized values, and the epoch loop with early stopping.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gwnet/data.hpp"
#include "gwnet/model.hpp"
#include "gwnet/tensor.hpp"

namespace gwnet {

double normalize_value(double x, const NormStats& stats);
double denormalize_value(double y, const NormStats& stats);
Tensor normalize(const Tensor& x, const NormStats& stats);
Tensor denormalize(const Tensor& y, const NormStats& stats);

struct MetricReport {
  std::vector<double> mae;   // per horizon step
  std::vector<double> rmse;  // per horizon step
  std::vector<double> mape;  // per horizon step, percent
  double mean_mae = 0.0;
  double mean_rmse = 0.0;
  double mean_mape = 0.0;
};

// Streaming masked metrics; merging two accumulators equals accumulating
// their union, so results do not depend on batch partitioning.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(Index horizon);
  // pred/target/mask: [B, T, N, D]; target and pred in raw (de-normalized)
  // units. MAPE skips entries whose target is zero.
  void add(const Tensor& pred, const Tensor& target, const Tensor& mask);
  void merge(const MetricsAccumulator& other);
  MetricReport report() const;

 private:
  std::vector<double> abs_, sq_, ape_;
  std::vector<Index> count_, mape_count_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over a fixed parameter list. A parameter whose
// gradient buffer was never touched counts as zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opt);
  void step();
  std::int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opt_;
  std::int64_t t_ = 0;
};

struct TrainOptions {
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 15;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool clip_gradients = false;
  double clip_norm = 5.0;
  std::uint64_t shuffle_seed = 1;
  bool verbose = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_mae = 0.0;  // masked MAE in normalized units over the epoch's batches
  double val_mae = 0.0;    // de-normalized, mean over horizons (NaN when no val split)
  double val_rmse = 0.0;
  double val_mape = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  double initial_train_mae = 0.0;  // before the first update
  std::vector<EpochRecord> history;
  std::vector<std::vector<double>> best_params;
  int best_epoch = -1;
  double best_score = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

// Masked MAE of the model over the given window starts, normalized units,
// no parameter updates.
double evaluate_split_loss(GraphWaveNet& model, const WindowedDataset& data, const std::vector<Index>& starts,
                           int batch_size);

// De-normalized metric report over the given window starts.
MetricReport evaluate_split_metrics(GraphWaveNet& model, const WindowedDataset& data,
                                    const std::vector<Index>& starts, int batch_size);

// Shuffled mini-batch epochs with best-on-validation snapshots and early
// stopping; falls back to the training loss for model selection when the
// validation split is empty. Throws DivergenceError on a non-finite loss.
TrainResult train_loop(GraphWaveNet& model, const WindowedDataset& data, const TrainOptions& opt);

}  // namespace gwnet
