#pragma once

#include "nowcast/tensor.hpp"

namespace nowcast {

// Displacement in pixels per step: f1(x) ~ f0(x - (u, v)).
struct FlowField {
  Tensor<float> u;  // [H, W], x component
  Tensor<float> v;  // [H, W], y component
};

struct FlowOptions {
  int levels = 3;
  int window = 11;      // odd side of the least-squares window
  int iterations = 10;  // Gauss-Newton passes per pixel and pyramid level
  double regularization = 1e-3;  // diagonal term, as a fraction of the frame's peak window energy
  double max_update = 1.0;       // pixels per solve, at the current pyramid level
};

// [H, W] -> [T_o, H, W] copies.
Tensor<float> persistence_forecast(const Tensor<float>& last_frame, int t_out);

FlowField estimate_flow(const Tensor<float>& f0, const Tensor<float>& f1, int levels, int window);
FlowField estimate_flow(const Tensor<float>& f0, const Tensor<float>& f1, const FlowOptions& opts);

FlowField scale_flow(const FlowField& flow, double factor);

// One backward semi-Lagrangian step: out(x) = frame(x - flow(x)), bilinear, zero outside.
Tensor<float> advect(const Tensor<float>& frame, const FlowField& flow);

// Flow from the last two inputs, rescaled by cadence_ratio (output step / input step),
// then advected T_o times from the last input.
Tensor<float> optical_flow_forecast(const Tensor<float>& previous, const Tensor<float>& last, int t_out,
                                    double cadence_ratio = 1.0, const FlowOptions& opts = {});

}  // namespace nowcast
