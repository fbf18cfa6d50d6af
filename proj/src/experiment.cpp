#include "nowcast/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <system_error>
#include <tuple>

#include "detail/binary.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/metrics.hpp"

namespace nowcast {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, end);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::string numbered(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu.nwrs", stem.c_str(), i);
  return buf;
}

// Removes what a failed command created, newest first.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove_all(*it, ec);
  }

  // Creates a directory (and missing parents), tracking every level it made.
  void directory(const fs::path& dir) {
    std::vector<fs::path> missing;
    for (fs::path p = dir; !p.empty() && !fs::exists(p); p = p.parent_path()) {
      missing.push_back(p);
      if (p == p.parent_path()) break;
    }
    fs::create_directories(dir);
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) created_.push_back(*it);
  }

  void write(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    track(path);
    detail::write_file_bytes(path.string(), bytes);
  }
  void write(const fs::path& path, const std::string& text) {
    write(path, std::vector<std::uint8_t>(text.begin(), text.end()));
  }
  // Files written by other routines.
  void track(const fs::path& path) {
    if (!fs::exists(path)) created_.push_back(path);
  }
  // Directory whose entire content is replaced by this command.
  void fresh_directory(const fs::path& dir) {
    if (fs::exists(dir)) fs::remove_all(dir);
    directory(dir);
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> created_;
  bool committed_ = false;
};

std::vector<fs::path> listing(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw ConfigError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void snapshot(OutputGuard& guard, const ExperimentConfig& cfg, const fs::path& dir, const std::string& command) {
  guard.write(dir / (command + ".config"), cfg.to_keys().to_string());
}

ModelConfig preset(const std::string& name) {
  if (name == "toy") return ModelConfig::toy();
  if (name == "default") return ModelConfig::production();
  throw ConfigError("model.preset must be toy or default, got '" + name + "'");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string::npos ? s.size() : comma;
    std::string item = s.substr(start, end - start);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

RadarSequence as_sequence(const std::string& id, const Tensor<float>& frames, const std::vector<int>& leads) {
  RadarSequence s;
  s.id = id;
  s.frames = frames;
  s.minute_offsets.assign(leads.begin(), leads.end());
  return s;
}

// Model units can leave [0, 75] dBZ only through rounding; forecasts are clamped on write.
Tensor<float> clamp_dbz(Tensor<float> x) {
  for (auto& v : x.mutable_data()) v = std::clamp(v, 0.0f, kMaxReflectivity);
  return x;
}

void write_forecasts(const ExperimentConfig& cfg, const std::vector<DatasetWindow>& windows,
                     const std::function<Tensor<float>(const DatasetWindow&)>& forecaster,
                     const std::string& command) {
  OutputGuard guard;
  guard.directory(cfg.run_dir);
  guard.fresh_directory(cfg.run_dir / "forecasts");
  guard.fresh_directory(cfg.run_dir / "truth");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const auto leads = lead_minutes(w);
    const std::string id = w.sequence_id + "#" + std::to_string(i);
    guard.write(cfg.run_dir / "forecasts" / numbered("window", i),
                encode_sequence(as_sequence(id, clamp_dbz(forecaster(w)), leads)));
    guard.write(cfg.run_dir / "truth" / numbered("window", i), encode_sequence(as_sequence(id, w.target, leads)));
  }
  snapshot(guard, cfg, cfg.run_dir, command);
  guard.commit();
}

Tensor<float> plane(const Tensor<float>& stack, std::int64_t k) {
  const auto& s = stack.shape();
  const std::int64_t n = s[1] * s[2];
  return Tensor<float>({s[1], s[2]},
                       std::vector<float>(stack.data().begin() + k * n, stack.data().begin() + (k + 1) * n));
}

}  // namespace

std::vector<std::string> experiment_keys() {
  return {"seed",
          "variant",
          "data_dir",
          "run_dir",
          "model.preset",
          "model.t_in",
          "model.t_out",
          "model.target_size",
          "model.lv_factor",
          "model.hrrr_frames",
          "train.learning_rate",
          "train.grad_clip_norm",
          "train.weight_decay",
          "train.beta1",
          "train.beta2",
          "train.adam_eps",
          "train.swa_start_fraction",
          "train.swa_every_steps",
          "train.batch_size",
          "train.total_steps",
          "train.seed",
          "train.bmae_breakpoints",
          "train.bmae_weights",
          "train.smoothing_window",
          "train.checkpoint_every",
          "data.side",
          "data.frames",
          "data.cadence_minutes",
          "data.cells",
          "data.amplitude_min",
          "data.amplitude_max",
          "data.width_min",
          "data.width_max",
          "data.anisotropy_max",
          "data.velocity_u",
          "data.velocity_v",
          "data.velocity_jitter",
          "data.rotation",
          "data.growth_min",
          "data.growth_max",
          "data.spawn_margin",
          "data.noise",
          "data.train_sequences",
          "data.test_sequences",
          "window.input_cadence_minutes",
          "window.output_cadence_minutes",
          "window.stride_frames",
          "surrogate.quality",
          "surrogate.blur_sigma_max",
          "surrogate.noise_max",
          "surrogate.displacement_max",
          "flow.levels",
          "flow.window",
          "flow.iterations",
          "baseline.method",
          "predict.checkpoint",
          "render.window",
          "render.rows"};
}

int ExperimentConfig::window_span_frames() const {
  const int span_minutes = (model.t_in - 1) * window.input_cadence_minutes + model.t_out * window.output_cadence_minutes;
  return span_minutes / synthetic.cadence_minutes + 1;
}

ExperimentConfig ExperimentConfig::from_keys(const KeyValueConfig& kv) {
  const auto unknown = kv.unknown_keys(experiment_keys());
  if (!unknown.empty()) throw ConfigError("unknown config key '" + unknown.front() + "'");

  auto int_of = [&](const std::string& key, long long fallback) {
    const long long v = kv.get_int(key, fallback);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw ConfigError(key + " out of range");
    return static_cast<int>(v);
  };
  auto seed_of = [&](const std::string& key, std::uint64_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::uint64_t>(v);
  };

  ExperimentConfig c;
  c.seed = seed_of("seed", 1);
  c.variant = parse_variant(kv.get_string("variant", "base"));
  c.data_dir = kv.get_string("data_dir", "data");
  c.run_dir = kv.get_string("run_dir", "run");

  c.model_preset = kv.get_string("model.preset", "toy");
  c.model = preset(c.model_preset);
  c.model.t_in = int_of("model.t_in", c.model.t_in);
  c.model.t_out = int_of("model.t_out", c.model.t_out);
  c.model.target_size = int_of("model.target_size", c.model.target_size);
  c.model.lv_factor = int_of("model.lv_factor", c.model.lv_factor);
  c.model.hrrr_frames = int_of("model.hrrr_frames", c.model.hrrr_frames);
  apply_variant(c.model, c.variant);
  c.model.validate();

  auto& t = c.train;
  t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
  t.grad_clip_norm = kv.get_double("train.grad_clip_norm", t.grad_clip_norm);
  t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
  t.beta1 = kv.get_double("train.beta1", t.beta1);
  t.beta2 = kv.get_double("train.beta2", t.beta2);
  t.adam_eps = kv.get_double("train.adam_eps", t.adam_eps);
  t.swa_start_fraction = kv.get_double("train.swa_start_fraction", t.swa_start_fraction);
  t.swa_every_steps = int_of("train.swa_every_steps", t.swa_every_steps);
  t.batch_size = int_of("train.batch_size", t.batch_size);
  t.total_steps = int_of("train.total_steps", t.total_steps);
  t.seed = seed_of("train.seed", c.seed);
  t.bmae_breakpoints = kv.get_doubles("train.bmae_breakpoints", t.bmae_breakpoints);
  t.bmae_weights = kv.get_doubles("train.bmae_weights", t.bmae_weights);
  t.smoothing_window = int_of("train.smoothing_window", t.smoothing_window);
  t.checkpoint_every = int_of("train.checkpoint_every", t.checkpoint_every);
  t.checkpoint_dir = c.run_dir / "checkpoints";
  t.validate();

  c.window.t_in = c.model.t_in;
  c.window.t_out = c.model.t_out;
  c.window.input_cadence_minutes = int_of("window.input_cadence_minutes", 2);
  c.window.output_cadence_minutes = int_of("window.output_cadence_minutes", 2);
  c.window.target_size = c.model.target_size;

  auto& g = c.synthetic;
  g.side = int_of("data.side", c.model.lv_factor * c.model.target_size);
  g.cadence_minutes = int_of("data.cadence_minutes", 2);
  if (g.cadence_minutes < 1) throw ConfigError("data.cadence_minutes must be positive");
  g.frames = int_of("data.frames", c.window_span_frames());
  g.cells = int_of("data.cells", g.cells);
  g.amplitude_min = kv.get_double("data.amplitude_min", g.amplitude_min);
  g.amplitude_max = kv.get_double("data.amplitude_max", g.amplitude_max);
  g.width_min = kv.get_double("data.width_min", g.width_min);
  g.width_max = kv.get_double("data.width_max", g.width_max);
  g.anisotropy_max = kv.get_double("data.anisotropy_max", g.anisotropy_max);
  g.velocity_u = kv.get_double("data.velocity_u", 1.0);
  g.velocity_v = kv.get_double("data.velocity_v", 0.5);
  g.velocity_jitter = kv.get_double("data.velocity_jitter", g.velocity_jitter);
  g.rotation = kv.get_double("data.rotation", g.rotation);
  g.growth_min = kv.get_double("data.growth_min", g.growth_min);
  g.growth_max = kv.get_double("data.growth_max", g.growth_max);
  g.spawn_margin = kv.get_double("data.spawn_margin", g.spawn_margin);
  g.noise = kv.get_double("data.noise", g.noise);
  g.validate();
  c.train_sequences = int_of("data.train_sequences", c.train_sequences);
  c.test_sequences = int_of("data.test_sequences", c.test_sequences);
  if (c.train_sequences < 0 || c.test_sequences < 0) throw ConfigError("sequence counts must be non-negative");
  c.window.stride_frames = int_of("window.stride_frames", c.window_span_frames());

  auto& s = c.surrogate;
  s.frames = c.model.hrrr_frames;
  s.quality = kv.get_double("surrogate.quality", s.quality);
  s.blur_sigma_max = kv.get_double("surrogate.blur_sigma_max", s.blur_sigma_max);
  s.noise_max = kv.get_double("surrogate.noise_max", s.noise_max);
  s.displacement_max = kv.get_double("surrogate.displacement_max", s.displacement_max);
  s.seed = c.seed;

  c.flow.levels = int_of("flow.levels", c.flow.levels);
  c.flow.window = int_of("flow.window", c.flow.window);
  c.flow.iterations = int_of("flow.iterations", c.flow.iterations);

  c.baseline_method = kv.get_string("baseline.method", c.baseline_method);
  if (c.baseline_method != "persistence" && c.baseline_method != "optical_flow")
    throw ConfigError("baseline.method must be persistence or optical_flow, got '" + c.baseline_method + "'");
  c.predict_checkpoint = kv.get_string("predict.checkpoint", c.predict_checkpoint);
  if (c.predict_checkpoint != "swa" && c.predict_checkpoint != "last")
    throw ConfigError("predict.checkpoint must be swa or last");
  c.render_window = int_of("render.window", 0);
  if (c.render_window < 0) throw ConfigError("render.window must be non-negative");
  c.render_rows = kv.get_string("render.rows", c.render_rows);
  return c;
}

KeyValueConfig ExperimentConfig::to_keys() const {
  KeyValueConfig kv;
  kv.set("seed", std::to_string(seed));
  kv.set("variant", variant_name(variant));
  kv.set("data_dir", data_dir.string());
  kv.set("run_dir", run_dir.string());
  kv.set("model.preset", model_preset);
  kv.set("model.t_in", std::to_string(model.t_in));
  kv.set("model.t_out", std::to_string(model.t_out));
  kv.set("model.target_size", std::to_string(model.target_size));
  kv.set("model.lv_factor", std::to_string(model.lv_factor));
  kv.set("model.hrrr_frames", std::to_string(model.hrrr_frames));
  kv.set("train.learning_rate", fmt(train.learning_rate));
  kv.set("train.grad_clip_norm", fmt(train.grad_clip_norm));
  kv.set("train.weight_decay", fmt(train.weight_decay));
  kv.set("train.beta1", fmt(train.beta1));
  kv.set("train.beta2", fmt(train.beta2));
  kv.set("train.adam_eps", fmt(train.adam_eps));
  kv.set("train.swa_start_fraction", fmt(train.swa_start_fraction));
  kv.set("train.swa_every_steps", std::to_string(train.swa_every_steps));
  kv.set("train.batch_size", std::to_string(train.batch_size));
  kv.set("train.total_steps", std::to_string(train.total_steps));
  kv.set("train.seed", std::to_string(train.seed));
  kv.set("train.bmae_breakpoints", fmt_list(train.bmae_breakpoints));
  kv.set("train.bmae_weights", fmt_list(train.bmae_weights));
  kv.set("train.smoothing_window", std::to_string(train.smoothing_window));
  kv.set("train.checkpoint_every", std::to_string(train.checkpoint_every));
  kv.set("data.side", std::to_string(synthetic.side));
  kv.set("data.frames", std::to_string(synthetic.frames));
  kv.set("data.cadence_minutes", std::to_string(synthetic.cadence_minutes));
  kv.set("data.cells", std::to_string(synthetic.cells));
  kv.set("data.amplitude_min", fmt(synthetic.amplitude_min));
  kv.set("data.amplitude_max", fmt(synthetic.amplitude_max));
  kv.set("data.width_min", fmt(synthetic.width_min));
  kv.set("data.width_max", fmt(synthetic.width_max));
  kv.set("data.anisotropy_max", fmt(synthetic.anisotropy_max));
  kv.set("data.velocity_u", fmt(synthetic.velocity_u));
  kv.set("data.velocity_v", fmt(synthetic.velocity_v));
  kv.set("data.velocity_jitter", fmt(synthetic.velocity_jitter));
  kv.set("data.rotation", fmt(synthetic.rotation));
  kv.set("data.growth_min", fmt(synthetic.growth_min));
  kv.set("data.growth_max", fmt(synthetic.growth_max));
  kv.set("data.spawn_margin", fmt(synthetic.spawn_margin));
  kv.set("data.noise", fmt(synthetic.noise));
  kv.set("data.train_sequences", std::to_string(train_sequences));
  kv.set("data.test_sequences", std::to_string(test_sequences));
  kv.set("window.input_cadence_minutes", std::to_string(window.input_cadence_minutes));
  kv.set("window.output_cadence_minutes", std::to_string(window.output_cadence_minutes));
  kv.set("window.stride_frames", std::to_string(window.stride_frames));
  kv.set("surrogate.quality", fmt(surrogate.quality));
  kv.set("surrogate.blur_sigma_max", fmt(surrogate.blur_sigma_max));
  kv.set("surrogate.noise_max", fmt(surrogate.noise_max));
  kv.set("surrogate.displacement_max", fmt(surrogate.displacement_max));
  kv.set("flow.levels", std::to_string(flow.levels));
  kv.set("flow.window", std::to_string(flow.window));
  kv.set("flow.iterations", std::to_string(flow.iterations));
  kv.set("baseline.method", baseline_method);
  kv.set("predict.checkpoint", predict_checkpoint);
  kv.set("render.window", std::to_string(render_window));
  kv.set("render.rows", render_rows);
  return kv;
}

// Sequence seeds: seed*100000 + i for train, + 50000 for test.
void cmd_gen_data(const ExperimentConfig& cfg) {
  OutputGuard guard;
  guard.directory(cfg.data_dir);
  for (const auto& [split, count, offset] :
       {std::tuple{"train", cfg.train_sequences, 0}, std::tuple{"test", cfg.test_sequences, 50000}}) {
    guard.fresh_directory(cfg.data_dir / split);
    for (int i = 0; i < count; ++i) {
      SyntheticConfig g = cfg.synthetic;
      g.seed = cfg.seed * 100000 + static_cast<std::uint64_t>(offset + i);
      auto seq = gen_synthetic_sequence(g);
      guard.write(cfg.data_dir / split / numbered("seq", static_cast<std::size_t>(i)), encode_sequence(seq));
    }
  }
  snapshot(guard, cfg, cfg.data_dir, "gen-data");
  guard.commit();
}

std::vector<DatasetWindow> load_split(const ExperimentConfig& cfg, const std::string& split) {
  std::vector<DatasetWindow> windows;
  for (const auto& path : listing(cfg.data_dir / split, ".nwrs")) {
    auto w = window_dataset(read_sequence(path), cfg.window);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  if (windows.empty()) throw ConfigError("no windows in " + (cfg.data_dir / split).string());
  if (cfg.model.use_hrrr) {
    SurrogateConfig s = cfg.surrogate;
    if (split != "train") s.seed += 1000003;
    attach_surrogates(windows, s);
  }
  return windows;
}

void cmd_train(const ExperimentConfig& cfg) {
  const auto windows = load_split(cfg, "train");
  const auto samples = make_samples(windows, cfg.model);
  OutputGuard guard;
  guard.directory(cfg.run_dir);
  if (cfg.train.checkpoint_every > 0) guard.fresh_directory(cfg.train.checkpoint_dir);
  const auto result = train_loop(init_params(cfg.model, cfg.seed), cfg.model, samples, cfg.train);
  guard.track(cfg.run_dir / "model_last.msnc");
  save_params(cfg.run_dir / "model_last.msnc", result.params);
  const ModelParams& best = result.swa_params ? *result.swa_params : result.params;
  guard.track(cfg.run_dir / "model.msnc");
  save_params(cfg.run_dir / "model.msnc", best);
  guard.write(cfg.run_dir / "loss.csv", loss_trace_csv(result.trace));
  snapshot(guard, cfg, cfg.run_dir, "train");
  guard.commit();
}

void cmd_predict(const ExperimentConfig& cfg) {
  const auto file = cfg.predict_checkpoint == "last" ? "model_last.msnc" : "model.msnc";
  const auto params = load_params(cfg.run_dir / file, cfg.model);
  const auto windows = load_split(cfg, "test");
  write_forecasts(
      cfg, windows, [&](const DatasetWindow& w) { return predict_window(params, cfg.model, w); }, "predict");
}

void cmd_baseline(const ExperimentConfig& cfg) {
  ExperimentConfig plain = cfg;
  plain.model.use_hrrr = false;  // baselines never read surrogates
  const auto windows = load_split(plain, "test");
  const auto size = cfg.model.target_size;
  const double ratio =
      static_cast<double>(cfg.window.output_cadence_minutes) / cfg.window.input_cadence_minutes;
  write_forecasts(
      cfg, windows,
      [&](const DatasetWindow& w) {
        const auto full = w.input.shape()[1];
        if (cfg.baseline_method == "persistence")
          return persistence_forecast(input_frame(w, 0, size), cfg.model.t_out);
        // Flow is estimated on the whole input viewport so motion from outside is seen.
        auto fc = optical_flow_forecast(input_frame(w, 1, full), input_frame(w, 0, full), cfg.model.t_out, ratio,
                                        cfg.flow);
        return full == size ? fc : center_crop(fc, size);
      },
      "baseline");
}

void cmd_evaluate(const ExperimentConfig& cfg) {
  const auto fc_files = listing(cfg.run_dir / "forecasts", ".nwrs");
  const auto truth_files = listing(cfg.run_dir / "truth", ".nwrs");
  if (fc_files.empty()) throw ConfigError("no forecasts in " + (cfg.run_dir / "forecasts").string());
  if (fc_files.size() != truth_files.size()) throw ConfigError("forecast and truth counts differ");
  std::vector<Tensor<float>> forecasts, truths;
  std::vector<int> leads;
  for (std::size_t i = 0; i < fc_files.size(); ++i) {
    if (fc_files[i].filename() != truth_files[i].filename())
      throw ConfigError("no truth for " + fc_files[i].filename().string());
    const auto f = read_sequence(fc_files[i]);
    const auto t = read_sequence(truth_files[i]);
    if (f.frames.shape() != t.frames.shape() || f.minute_offsets != t.minute_offsets)
      throw ConfigError("forecast and truth grids differ for " + fc_files[i].filename().string());
    const std::vector<int> l(t.minute_offsets.begin(), t.minute_offsets.end());
    if (i == 0) leads = l;
    if (l != leads) throw ConfigError("lead grid differs across windows");
    forecasts.push_back(f.frames);
    truths.push_back(t.frames);
  }
  const auto report = evaluate_run(forecasts, truths, leads);
  OutputGuard guard;
  guard.write(cfg.run_dir / "metrics.csv", report.to_csv());
  snapshot(guard, cfg, cfg.run_dir, "evaluate");
  guard.commit();
}

std::uint8_t gray_level(float dbz) {
  const double v = std::clamp(static_cast<double>(dbz), 0.0, 70.0);
  return static_cast<std::uint8_t>(std::floor(v / 70.0 * 255.0));
}

std::vector<std::uint8_t> encode_pgm(const Tensor<float>& frame) {
  if (frame.rank() != 2) throw ConfigError("render expects [H, W] frames");
  const std::string header =
      "P5\n" + std::to_string(frame.shape()[1]) + " " + std::to_string(frame.shape()[0]) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (float v : frame.data()) out.push_back(gray_level(v));
  return out;
}

// Rows: `truth`, `forecast`, or `label=<run dir>` for another run's forecast.
void cmd_render(const ExperimentConfig& cfg) {
  const auto name = numbered("window", static_cast<std::size_t>(cfg.render_window));
  std::vector<std::pair<std::string, RadarSequence>> rows;
  for (const auto& spec : split_commas(cfg.render_rows)) {
    fs::path file;
    std::string label = spec;
    if (spec == "truth") {
      file = cfg.run_dir / "truth" / name;
    } else if (spec == "forecast") {
      file = cfg.run_dir / "forecasts" / name;
    } else if (const auto eq = spec.find('='); eq != std::string::npos && eq > 0) {
      label = spec.substr(0, eq);
      file = fs::path(spec.substr(eq + 1)) / "forecasts" / name;
    } else {
      throw ConfigError("bad render row '" + spec + "'");
    }
    if (!fs::exists(file)) throw ConfigError("missing " + file.string());
    rows.emplace_back(label, read_sequence(file));
  }
  if (rows.empty()) throw ConfigError("render.rows is empty");
  for (const auto& [label, seq] : rows)
    if (seq.frames.shape() != rows[0].second.frames.shape() || seq.minute_offsets != rows[0].second.minute_offsets)
      throw ConfigError("render row '" + label + "' does not match the shape or lead grid of '" + rows[0].first + "'");

  OutputGuard guard;
  const fs::path out = cfg.run_dir / "render" / name.substr(0, name.size() - 5);
  guard.directory(cfg.run_dir / "render");
  guard.fresh_directory(out);
  for (const auto& [label, seq] : rows)
    for (std::int64_t k = 0; k < seq.length(); ++k)
      guard.write(out / (label + "_" + std::to_string(seq.minute_offsets[k]) + ".pgm"),
                  encode_pgm(plane(seq.frames, k)));
  snapshot(guard, cfg, out, "render");
  guard.commit();
}

void run_command(const std::string& command, const ExperimentConfig& cfg) {
  if (command == "gen-data") return cmd_gen_data(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "predict") return cmd_predict(cfg);
  if (command == "baseline") return cmd_baseline(cfg);
  if (command == "evaluate") return cmd_evaluate(cfg);
  if (command == "render") return cmd_render(cfg);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace nowcast
