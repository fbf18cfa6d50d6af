#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nowcast/ops.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

// Hyperparameters of one encoder/forecaster level.
struct LayerConfig {
  // Encoder down-convolution feeding this level's cell.
  int down_channels = 16;
  int down_kernel = 6;
  int down_stride = 3;
  int down_padding = 0;
  // ConvLSTM hidden width and gate kernel (padding is kernel / 2).
  int hidden_channels = 64;
  int cell_kernel = 3;
  // Forecaster up-convolution leaving this level.
  int up_channels = 16;
  int up_kernel = 7;
  int up_stride = 3;
  int up_padding = 0;
};

struct ModelConfig {
  int t_in = 20;
  int t_out = 45;
  int lv_factor = 5;
  int target_size = 256;
  std::array<LayerConfig, 3> layers = default_layers();
  int head_channels = 16;
  int head_kernel = 3;
  int group_norm_groups = 4;
  double group_norm_eps = 1e-5;
  double leaky_slope = 0.2;
  bool use_lv = true;
  bool use_hrrr = true;
  int hrrr_frames = 7;

  static std::array<LayerConfig, 3> default_layers();
  // The production architecture.
  static ModelConfig production();
  // Desk-scale configuration used by the training experiments:
  // T_i=4, T_o=6, F=5, 16x16 target, 16 -> 8 -> 4 -> 2 spatial chain.
  static ModelConfig toy();

  int input_channels() const { return use_lv ? lv_factor * lv_factor : 1; }
  int input_side() const { return use_lv ? lv_factor * target_size : target_size; }
  // Spatial side at each encoder level (after its down-convolution).
  std::array<std::int64_t, 3> level_sizes() const;
  // Throws ConfigError unless the encoder chain strictly shrinks and the
  // forecaster chain inverts it exactly.
  void validate() const;
};

template <typename T>
struct BasicConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct BasicCellParams {
  Tensor<T> gate_weight;  // [4*Ch, Cx+Ch, k, k], gates ordered i, f, g, o
  Tensor<T> gate_bias;    // [4*Ch]
  Tensor<T> gn_gamma;     // [4*Ch]
  Tensor<T> gn_beta;      // [4*Ch]
};

template <typename T>
struct BasicModelParams {
  Tensor<T> bridge_weights;  // [t_in]
  std::array<BasicConvParams<T>, 3> encoder_down;
  std::array<BasicCellParams<T>, 3> encoder_cells;
  std::array<BasicConvParams<T>, 3> hrrr_down;  // undefined tensors unless use_hrrr
  std::array<BasicCellParams<T>, 3> forecaster_cells;
  std::array<BasicConvParams<T>, 3> forecaster_up;
  BasicConvParams<T> head_conv;  // final-conv.0
  BasicConvParams<T> head_out;   // final-conv.2

  // Every trainable array with its checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> tensors() const;
  std::size_t parameter_count() const;
  BasicModelParams clone() const;
  template <typename U>
  BasicModelParams<U> cast_to() const;
};

using ModelParams = BasicModelParams<float>;
using ConvParams = BasicConvParams<float>;
using CellParams = BasicCellParams<float>;

template <typename T>
struct LayerState {
  Tensor<T> h;
  Tensor<T> c;
};

template <typename T>
struct EncoderOutput {
  std::array<Tensor<T>, 3> hidden_stacks;  // [B, T_i, C_l, H_l, W_l]
  std::array<Tensor<T>, 3> final_cells;    // [B, C_l, H_l, W_l]
};

// Tiles frame[B,1,F*S,F*S] into F*F channels; tile (r, c) -> channel r*F+c.
template <typename T>
Tensor<T> lv_stack(const Tensor<T>& frame, int factor);
template <typename T>
Tensor<T> lv_unstack(const Tensor<T>& stacked, int factor);
// Applies lv_stack to every time step of x[B,T,1,F*S,F*S].
template <typename T>
Tensor<T> lv_stack_sequence(const Tensor<T>& x, int factor);

template <typename T>
LayerState<T> convlstm_cell_step(const Tensor<T>& x, const LayerState<T>& state,
                                 const BasicCellParams<T>& params, int groups, double eps);

template <typename T>
EncoderOutput<T> encode(const Tensor<T>& frames, const BasicModelParams<T>& params,
                        const ModelConfig& cfg);

// h = sum_i w_i * hidden_stack[:, i], returned as [B, C, H, W].
template <typename T>
Tensor<T> bridge_hidden(const Tensor<T>& hidden_stack, const Tensor<T>& w);

// Forecaster initial states: bridged hidden states plus the encoder's final
// cell states, one per level.
template <typename T>
std::array<LayerState<T>, 3> bridge_states(const EncoderOutput<T>& enc,
                                           const BasicModelParams<T>& params);

template <typename T>
Tensor<T> hrrr_encode(const Tensor<T>& hrrr_frames, const BasicModelParams<T>& params,
                      const ModelConfig& cfg);

// Unrolls the forecaster for cfg.t_out steps. `conditioning` is
// [B, T_o, C3, H3, W3]; when absent, zeros are fed to the top level.
template <typename T>
Tensor<T> forecast(const std::array<LayerState<T>, 3>& initial,
                   const std::optional<std::type_identity_t<Tensor<T>>>& conditioning,
                   const BasicModelParams<T>& params,
                   const ModelConfig& cfg);

// Full model. `frames` is either raw [B,T_i,1,F*S,F*S] (tiled here) or
// already stacked [B,T_i,F*F,S,S]; without LV it is [B,T_i,1,S,S].
// `hrrr` is [B,K,1,S,S] and is required iff cfg.use_hrrr.
template <typename T>
Tensor<T> forward(const Tensor<T>& frames, const std::optional<std::type_identity_t<Tensor<T>>>& hrrr,
                  const BasicModelParams<T>& params, const ModelConfig& cfg);

// Uniform fan-in initialisation for kernels, zero biases, unit/zero group
// norm affine, bridge weights one-hot at the last input step.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Expected (name, shape) list for a configuration.
std::vector<std::pair<std::string, Shape>> parameter_manifest(const ModelConfig& cfg);

}  // namespace nowcast
