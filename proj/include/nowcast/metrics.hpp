#pragma once

#include <string>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

inline constexpr double kDefaultDataRange = 70.0;
inline constexpr double kPsnrCap = 100.0;

struct PointwiseErrors {
  double mae = 0.0;
  double mse = 0.0;
  double bias = 0.0;
};

PointwiseErrors pointwise_errors(const Tensor<float>& pred, const Tensor<float>& truth);

// Both masks empty counts as perfect agreement (1.0).
double f1_at_threshold(const Tensor<float>& pred, const Tensor<float>& truth, double threshold_dbz);

double psnr(const Tensor<float>& pred, const Tensor<float>& truth, double data_range = kDefaultDataRange,
            double cap = kPsnrCap);

// Number of dyadic scales an image of this side supports (at most 5, 0 if under 11 px).
int ms_ssim_scales(std::int64_t side);

// Inputs are [H, W] or a stack [..., H, W]; stacks return the mean over planes.
double ms_ssim(const Tensor<float>& pred, const Tensor<float>& truth, double data_range = kDefaultDataRange);

struct MetricsRow {
  std::string label;  // lead minutes, or agg_0_2h / agg_0_6h
  double mae = 0.0;
  double f1_12 = 0.0;
  double f1_18 = 0.0;
  double f1_23 = 0.0;
  double bias = 0.0;
  double ms_ssim = 0.0;
  double psnr = 0.0;
};

struct MetricsReport {
  std::vector<int> lead_minutes;
  std::vector<MetricsRow> rows;  // one per lead, same order as lead_minutes
  MetricsRow agg_0_2h;
  MetricsRow agg_0_6h;

  std::string to_csv() const;
  static MetricsReport from_csv(const std::string& text);
};

// The per-frame metrics that feed a report row.
MetricsRow frame_metrics(const Tensor<float>& pred, const Tensor<float>& truth, double data_range = kDefaultDataRange);

// forecasts[i] and truths[i] are [T_o, H, W] dBZ; lead_minutes has T_o entries.
// Per-lead rows average over samples; aggregates average over every (sample, lead) frame in range.
MetricsReport evaluate_run(const std::vector<Tensor<float>>& forecasts, const std::vector<Tensor<float>>& truths,
                           const std::vector<int>& lead_minutes, double data_range = kDefaultDataRange);

}  // namespace nowcast
