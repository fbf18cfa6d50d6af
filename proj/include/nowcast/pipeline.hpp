#pragma once

#include <string>
#include <vector>

#include "nowcast/data.hpp"
#include "nowcast/model.hpp"
#include "nowcast/training.hpp"

namespace nowcast {

enum class Variant { base, hrrr, lv, hrrr_lv };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
// base -> neither flag, hrrr_lv -> both.
void apply_variant(ModelConfig& cfg, Variant v);

// Fills window.hrrr from the window's own targets; window i uses seed cfg.seed + i.
void attach_surrogates(std::vector<DatasetWindow>& windows, const SurrogateConfig& cfg);

// Crops or keeps the viewport as the variant needs and normalises to model units.
TrainingSample make_sample(const DatasetWindow& window, const ModelConfig& cfg);
std::vector<TrainingSample> make_samples(const std::vector<DatasetWindow>& windows, const ModelConfig& cfg);

// Lead times of the targets relative to the last input frame.
std::vector<int> lead_minutes(const DatasetWindow& window);

// Tape-free forecast in dBZ, [T_o, S, S].
Tensor<float> predict_window(const ModelParams& params, const ModelConfig& cfg, const DatasetWindow& window);

// Last input frames cropped to the target viewport, [H, W] each.
Tensor<float> input_frame(const DatasetWindow& window, std::int64_t index_from_end, std::int64_t size);

}  // namespace nowcast
