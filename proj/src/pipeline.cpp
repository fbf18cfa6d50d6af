#include "nowcast/pipeline.hpp"

#include "nowcast/errors.hpp"

namespace nowcast {

Variant parse_variant(const std::string& name) {
  if (name == "base") return Variant::base;
  if (name == "hrrr") return Variant::hrrr;
  if (name == "lv") return Variant::lv;
  if (name == "hrrr_lv") return Variant::hrrr_lv;
  throw ConfigError("unknown variant '" + name + "' (expected base, hrrr, lv or hrrr_lv)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::hrrr: return "hrrr";
    case Variant::lv: return "lv";
    case Variant::hrrr_lv: return "hrrr_lv";
  }
  return "base";
}

void apply_variant(ModelConfig& cfg, Variant v) {
  cfg.use_hrrr = v == Variant::hrrr || v == Variant::hrrr_lv;
  cfg.use_lv = v == Variant::lv || v == Variant::hrrr_lv;
}

void attach_surrogates(std::vector<DatasetWindow>& windows, const SurrogateConfig& cfg) {
  for (std::size_t i = 0; i < windows.size(); ++i) {
    SurrogateConfig c = cfg;
    c.seed = cfg.seed + i;
    windows[i].hrrr = make_hrrr_surrogate(windows[i].target, c);
  }
}

TrainingSample make_sample(const DatasetWindow& window, const ModelConfig& cfg) {
  const std::int64_t s = cfg.target_size;
  const auto& in_shape = window.input.shape();
  const auto& tg_shape = window.target.shape();
  if (in_shape[0] != cfg.t_in || tg_shape[0] != cfg.t_out)
    throw ConfigError("window has " + std::to_string(in_shape[0]) + "/" + std::to_string(tg_shape[0]) +
                      " frames, config expects " + std::to_string(cfg.t_in) + "/" + std::to_string(cfg.t_out));
  if (tg_shape[1] != s || tg_shape[2] != s)
    throw ConfigError("targets must be " + std::to_string(s) + " px square, got " + to_string(tg_shape));
  TrainingSample out;
  Tensor<float> frames = window.input;
  if (cfg.use_lv) {
    if (in_shape[1] != cfg.input_side())
      throw ConfigError("LV input must be " + std::to_string(cfg.input_side()) + " px, got " + to_string(in_shape));
  } else if (in_shape[1] != s) {
    frames = center_crop(frames, s);
  }
  const auto side = frames.shape()[1];
  out.input = normalize_dbz(frames).reshape({cfg.t_in, 1, side, side});
  out.target_dbz = window.target.reshape({cfg.t_out, 1, s, s});
  out.target = normalize_dbz(out.target_dbz);
  if (cfg.use_hrrr) {
    if (!window.hrrr) throw ConfigError("HRRR variant needs surrogate frames");
    if (window.hrrr->shape() != Shape{cfg.hrrr_frames, 1, s, s})
      throw ConfigError("surrogate shape " + to_string(window.hrrr->shape()) + " does not match the config");
    out.hrrr = normalize_dbz(*window.hrrr);
  }
  return out;
}

std::vector<TrainingSample> make_samples(const std::vector<DatasetWindow>& windows, const ModelConfig& cfg) {
  std::vector<TrainingSample> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(make_sample(w, cfg));
  return out;
}

std::vector<int> lead_minutes(const DatasetWindow& window) {
  std::vector<int> leads;
  for (auto m : window.target_minutes) leads.push_back(m - window.input_minutes.back());
  return leads;
}

Tensor<float> predict_window(const ModelParams& params, const ModelConfig& cfg, const DatasetWindow& window) {
  const TrainingSample s = make_sample(window, cfg);
  const auto& is = s.input.shape();
  const Tensor<float> x = s.input.reshape({1, is[0], is[1], is[2], is[3]});
  std::optional<Tensor<float>> h;
  if (s.hrrr) {
    const auto& hs = s.hrrr->shape();
    h = s.hrrr->reshape({1, hs[0], hs[1], hs[2], hs[3]});
  }
  const Tensor<float> y = forward(x, h, params, cfg);
  return denormalize_dbz(y.reshape({cfg.t_out, cfg.target_size, cfg.target_size}));
}

Tensor<float> input_frame(const DatasetWindow& window, std::int64_t index_from_end, std::int64_t size) {
  const auto& s = window.input.shape();
  const std::int64_t t = s[0] - 1 - index_from_end;
  if (t < 0) throw ConfigError("window has too few input frames");
  const std::int64_t plane = s[1] * s[2];
  std::vector<float> v(window.input.data().begin() + t * plane, window.input.data().begin() + (t + 1) * plane);
  Tensor<float> frame({s[1], s[2]}, std::move(v));
  return size == s[1] ? frame : center_crop(frame, size);
}

}  // namespace nowcast
