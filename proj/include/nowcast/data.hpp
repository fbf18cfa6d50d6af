#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

inline constexpr float kMaxReflectivity = 75.0f;
inline constexpr std::uint16_t kSequenceVersion = 1;

struct GridMeta {
  double origin_x_km = 0.0;
  double origin_y_km = 0.0;
  float cell_km = 1.0f;
};

struct RadarSequence {
  std::string id;
  Tensor<float> frames;  // [T, H, W] dBZ
  std::vector<std::int32_t> minute_offsets;
  GridMeta grid;

  std::int64_t length() const { return frames.defined() ? frames.shape()[0] : 0; }
  std::int64_t side() const { return frames.defined() ? frames.shape()[1] : 0; }
  // Throws ConfigError when shape, offsets or value range are off.
  void validate() const;
};

struct SyntheticConfig {
  int side = 64;
  int frames = 40;
  int cadence_minutes = 2;
  int cells = 4;
  double amplitude_min = 25.0;
  double amplitude_max = 55.0;
  double width_min = 3.0;  // Gaussian sigma in pixels
  double width_max = 8.0;
  double anisotropy_max = 2.0;  // ratio of the long to the short axis
  double velocity_u = 0.0;      // pixels per native frame, x to the right
  double velocity_v = 0.0;      // y downwards
  double velocity_jitter = 0.0; // per-cell uniform extra velocity in [-j, j]
  double rotation = 0.0;        // radians per frame about the domain centre
  double growth_min = 0.0;      // log-amplitude rate per frame
  double growth_max = 0.0;
  double spawn_margin = 0.0;    // cells may start this many pixels outside the domain
  double noise = 0.0;           // Gaussian dBZ standard deviation
  std::uint64_t seed = 1;

  void validate() const;
};

RadarSequence gen_synthetic_sequence(const SyntheticConfig& cfg);

struct SurrogateConfig {
  int frames = 7;  // K
  double quality = 0.9;
  double blur_sigma_max = 2.0;    // pixels at quality 0
  double noise_max = 4.0;         // dBZ at quality 0
  double displacement_max = 4.0;  // pixels at quality 0
  std::uint64_t seed = 1;
};

// Indices of the T_o targets kept at the coarse cadence.
std::vector<std::int64_t> surrogate_indices(std::int64_t t_out, int frames);

// truth_targets [T_o, H, W] dBZ -> [K, 1, H, W] dBZ.
Tensor<float> make_hrrr_surrogate(const Tensor<float>& truth_targets, const SurrogateConfig& cfg);

struct WindowConfig {
  int t_in = 20;
  int t_out = 45;
  int input_cadence_minutes = 4;
  int output_cadence_minutes = 8;
  int stride_frames = 1;  // native frames between window starts
  int target_size = 0;    // centre crop of targets; 0 keeps the full frame
};

struct DatasetWindow {
  std::string sequence_id;
  Tensor<float> input;   // [T_i, H, W] dBZ, full viewport
  Tensor<float> target;  // [T_o, S, S] dBZ, centre crop
  std::vector<std::int32_t> input_minutes;
  std::vector<std::int32_t> target_minutes;
  std::optional<Tensor<float>> hrrr;  // [K, 1, S, S] dBZ
};

std::vector<DatasetWindow> window_dataset(const RadarSequence& seq, const WindowConfig& cfg);

// Centre crop of the trailing two axes.
Tensor<float> center_crop(const Tensor<float>& x, std::int64_t size);

// dBZ -> [0, 1] model units and back.
Tensor<float> normalize_dbz(const Tensor<float>& dbz);
Tensor<float> denormalize_dbz(const Tensor<float>& units);
inline constexpr float kNormalizationRange = 70.0f;

std::vector<std::uint8_t> encode_sequence(const RadarSequence& seq);
RadarSequence decode_sequence(const std::vector<std::uint8_t>& bytes);
void write_sequence(const std::filesystem::path& path, const RadarSequence& seq);
RadarSequence read_sequence(const std::filesystem::path& path);

}  // namespace nowcast
