#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/model.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

struct TrainConfig {
  double learning_rate = 2e-4;
  double grad_clip_norm = 1.0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double swa_start_fraction = 0.75;
  int swa_every_steps = 1;
  int batch_size = 4;
  int total_steps = 300;
  std::uint64_t seed = 1;
  std::vector<double> bmae_breakpoints{12.0, 18.0, 23.0};
  std::vector<double> bmae_weights{1.0, 2.0, 5.0, 10.0};
  int smoothing_window = 25;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::filesystem::path checkpoint_dir;

  void validate() const;
  int swa_start_step() const;
};

// Piecewise-constant weight by ground-truth dBZ: weights[i] on [breakpoints[i-1], breakpoints[i]).
template <typename T>
Tensor<T> bmae_pixel_weights(const Tensor<T>& truth_dbz, const std::vector<double>& breakpoints,
                             const std::vector<double>& weights);

// mean(w * (|pred - truth| + (pred - truth)^2) / 2); differentiable in pred.
template <typename T>
Tensor<T> weighted_mae_mse_loss(const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& w);

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params);

// Scales every gradient by max_norm / norm when norm exceeds max_norm; returns the factor.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& params, double max_norm);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
  std::vector<std::vector<double>> swa_sum;
  std::int64_t swa_count = 0;

  static OptimizerState init(const std::vector<Tensor<T>>& params);
};

// Coupled L2: g + weight_decay * theta enters both moments. Params without a grad see g = 0.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, const TrainConfig& cfg);

template <typename T>
void swa_update(OptimizerState<T>& state, const std::vector<Tensor<T>>& params);

// Fresh tensors holding the snapshot mean; live params are untouched.
template <typename T>
std::vector<Tensor<T>> swa_finalize(const OptimizerState<T>& state, const std::vector<Tensor<T>>& like);

// One model-ready example without the batch axis, normalised units.
struct TrainingSample {
  Tensor<float> input;                 // [T_i, C, H, W]; raw [T_i, 1, F*S, F*S] under LV
  std::optional<Tensor<float>> hrrr;   // [K, 1, S, S]
  Tensor<float> target;                // [T_o, 1, S, S]
  Tensor<float> target_dbz;            // [T_o, 1, S, S], drives the loss weights
};

struct LossRecord {
  int step = 0;
  double raw = 0.0;
  double smoothed = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::optional<ModelParams> swa_params;
  std::vector<LossRecord> trace;
};

std::string loss_trace_csv(const std::vector<LossRecord>& trace);

// Order of examples seen at each step; seeded epoch shuffles.
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t dataset_size, const TrainConfig& cfg);

TrainResult train_loop(const ModelParams& initial, const ModelConfig& model_cfg,
                       const std::vector<TrainingSample>& dataset, const TrainConfig& cfg);

}  // namespace nowcast
