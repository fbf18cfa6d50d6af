#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nowcast/baselines.hpp"
#include "nowcast/config.hpp"
#include "nowcast/data.hpp"
#include "nowcast/model.hpp"
#include "nowcast/pipeline.hpp"
#include "nowcast/training.hpp"

namespace nowcast {

// Everything one run needs, resolved from a flat key=value file.
//
// Directory layout:
//   <data_dir>/train/seq_XXXX.nwrs, <data_dir>/test/seq_XXXX.nwrs
//   <run_dir>/model.msnc, model_last.msnc, loss.csv, checkpoints/
//   <run_dir>/forecasts/window_XXXX.nwrs, truth/window_XXXX.nwrs
//   <run_dir>/metrics.csv, render/window_XXXX/<row>_<lead_min>.pgm
//   <dir>/<command>.config   resolved configuration snapshot
struct ExperimentConfig {
  std::uint64_t seed = 1;
  Variant variant = Variant::base;
  std::string model_preset = "toy";
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  SyntheticConfig synthetic;
  int train_sequences = 16;
  int test_sequences = 4;
  WindowConfig window;
  SurrogateConfig surrogate;
  FlowOptions flow;
  std::string baseline_method = "persistence";
  std::string predict_checkpoint = "swa";  // swa | last
  int render_window = 0;
  std::string render_rows = "truth,forecast";
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "run";

  static ExperimentConfig from_keys(const KeyValueConfig& kv);
  // Every key from_keys understands, with its resolved value.
  KeyValueConfig to_keys() const;
  // Native frames spanned by one window, inclusive.
  int window_span_frames() const;
};

std::vector<std::string> experiment_keys();

// Each command throws ConfigError/FormatError/NumericError on failure after
// deleting whatever it had written.
void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_predict(const ExperimentConfig& cfg);
void cmd_baseline(const ExperimentConfig& cfg);
void cmd_evaluate(const ExperimentConfig& cfg);
void cmd_render(const ExperimentConfig& cfg);

// Runs a command by name.
void run_command(const std::string& command, const ExperimentConfig& cfg);

// Dataset windows of one split, with surrogates attached when the model uses them.
std::vector<DatasetWindow> load_split(const ExperimentConfig& cfg, const std::string& split);

// floor(clamp(dbz, 0, 70) / 70 * 255).
std::uint8_t gray_level(float dbz);
// Binary PGM (P5) bytes of a [H, W] dBZ frame.
std::vector<std::uint8_t> encode_pgm(const Tensor<float>& frame);

}  // namespace nowcast
