#include "nowcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <unordered_map>

#include "detail/binary.hpp"
#include "detail/image.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

void RadarSequence::validate() const {
  if (!frames.defined() || frames.rank() != 3) throw ConfigError("radar sequence frames must be [T,H,W]");
  const auto& s = frames.shape();
  if (s[0] < 1) throw ConfigError("radar sequence needs at least one frame");
  if (s[1] != s[2]) throw ConfigError("radar frames must be square, got " + to_string(s));
  if (static_cast<std::int64_t>(minute_offsets.size()) != s[0])
    throw ConfigError("minute_offsets length does not match frame count");
  for (std::size_t i = 1; i < minute_offsets.size(); ++i)
    if (minute_offsets[i] <= minute_offsets[i - 1])
      throw ConfigError("minute_offsets must be strictly increasing");
  for (float v : frames.data())
    if (!(v >= 0.0f && v <= kMaxReflectivity)) throw ConfigError("reflectivity outside [0, 75] dBZ");
}

void SyntheticConfig::validate() const {
  if (side < 1 || frames < 1 || cadence_minutes < 1 || cells < 0)
    throw ConfigError("synthetic config needs positive side, frames and cadence");
  if (!(width_min > 0 && width_max >= width_min)) throw ConfigError("synthetic widths must be positive");
  if (anisotropy_max < 1) throw ConfigError("anisotropy_max must be >= 1");
  if (amplitude_max < amplitude_min || growth_max < growth_min)
    throw ConfigError("synthetic ranges must have max >= min");
  if (noise < 0 || spawn_margin < 0 || velocity_jitter < 0) throw ConfigError("negative synthetic magnitude");
}

namespace {

struct Cell {
  double x, y, amplitude, sigma_major, sigma_minor, angle, growth, du, dv;
};

double draw(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

RadarSequence gen_synthetic_sequence(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const double lo = -cfg.spawn_margin, hi = cfg.side + cfg.spawn_margin;
  std::vector<Cell> cells(static_cast<std::size_t>(cfg.cells));
  for (auto& c : cells) {
    c.x = draw(rng, lo, hi);
    c.y = draw(rng, lo, hi);
    c.amplitude = draw(rng, cfg.amplitude_min, cfg.amplitude_max);
    c.sigma_minor = draw(rng, cfg.width_min, cfg.width_max);
    c.sigma_major = c.sigma_minor * draw(rng, 1.0, cfg.anisotropy_max);
    c.angle = draw(rng, 0.0, std::numbers::pi);
    c.growth = draw(rng, cfg.growth_min, cfg.growth_max);
    c.du = draw(rng, -cfg.velocity_jitter, cfg.velocity_jitter);
    c.dv = draw(rng, -cfg.velocity_jitter, cfg.velocity_jitter);
  }

  const std::int64_t n = cfg.side;
  RadarSequence seq;
  seq.id = "synthetic-" + std::to_string(cfg.seed);
  seq.frames = Tensor<float>::zeros({cfg.frames, n, n});
  auto out = seq.frames.mutable_data();
  const double centre = (n - 1) / 2.0;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> acc(static_cast<std::size_t>(n * n));

  for (int t = 0; t < cfg.frames; ++t) {
    seq.minute_offsets.push_back(t * cfg.cadence_minutes);
    std::fill(acc.begin(), acc.end(), 0.0);
    const double rot = cfg.rotation * t;
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (const auto& c : cells) {
      const double rx = c.x - centre, ry = c.y - centre;
      const double px = centre + cr * rx - sr * ry + (cfg.velocity_u + c.du) * t;
      const double py = centre + sr * rx + cr * ry + (cfg.velocity_v + c.dv) * t;
      const double amp = c.amplitude * std::exp(c.growth * t);
      const double ca = std::cos(c.angle + rot), sa = std::sin(c.angle + rot);
      const double inv_major = 1.0 / (c.sigma_major * c.sigma_major);
      const double inv_minor = 1.0 / (c.sigma_minor * c.sigma_minor);
      for (std::int64_t y = 0; y < n; ++y) {
        const double dy = static_cast<double>(y) - py;
        for (std::int64_t x = 0; x < n; ++x) {
          const double dx = static_cast<double>(x) - px;
          const double a = dx * ca + dy * sa;
          const double b = -dx * sa + dy * ca;
          const double q = a * a * inv_major + b * b * inv_minor;
          if (q < 60.0) acc[static_cast<std::size_t>(y * n + x)] += amp * std::exp(-0.5 * q);
        }
      }
    }
    float* frame = out.data() + static_cast<std::ptrdiff_t>(t) * n * n;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      double v = acc[i];
      if (cfg.noise > 0) v += cfg.noise * gauss(rng);
      frame[i] = static_cast<float>(std::clamp(v, 0.0, static_cast<double>(kMaxReflectivity)));
    }
  }
  return seq;
}

std::vector<std::int64_t> surrogate_indices(std::int64_t t_out, int frames) {
  if (frames < 1 || frames > t_out)
    throw ConfigError("surrogate frame count must be in [1, T_o], got " + std::to_string(frames));
  std::vector<std::int64_t> idx;
  if (frames == 1) return {t_out - 1};
  for (int j = 0; j < frames; ++j)
    idx.push_back(std::llround(static_cast<double>(j) * static_cast<double>(t_out - 1) / (frames - 1)));
  return idx;
}

Tensor<float> make_hrrr_surrogate(const Tensor<float>& truth_targets, const SurrogateConfig& cfg) {
  if (truth_targets.rank() != 3) throw ConfigError("surrogate expects targets [T_o,H,W]");
  if (cfg.quality < 0 || cfg.quality > 1) throw ConfigError("surrogate quality must be in [0,1]");
  const auto& s = truth_targets.shape();
  const auto idx = surrogate_indices(s[0], cfg.frames);
  const std::int64_t h = s[1], w = s[2], plane = h * w;
  const double severity = 1.0 - cfg.quality;

  std::mt19937_64 rng(cfg.seed);
  const double phi = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double shift_x = cfg.displacement_max * severity * std::cos(phi);
  const double shift_y = cfg.displacement_max * severity * std::sin(phi);
  const double sigma = cfg.blur_sigma_max * severity;
  const double noise = cfg.noise_max * severity;
  std::normal_distribution<double> gauss(0.0, 1.0);

  Tensor<float> out = Tensor<float>::zeros({static_cast<std::int64_t>(idx.size()), 1, h, w});
  auto dst = out.mutable_data();
  const auto src = truth_targets.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::span<const float> frame = src.subspan(static_cast<std::size_t>(idx[k] * plane), static_cast<std::size_t>(plane));
    std::vector<float> work(frame.begin(), frame.end());
    if (severity > 0) {
      if (shift_x != 0 || shift_y != 0) {
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x)
            work[y * w + x] = detail::bilinear_zero(frame, h, w, x - shift_x, y - shift_y);
      }
      if (sigma > 0) work = detail::gaussian_blur<float>(work, h, w, sigma);
      for (auto& v : work) {
        double n = noise > 0 ? noise * gauss(rng) : 0.0;
        v = static_cast<float>(std::clamp(v + n, 0.0, static_cast<double>(kMaxReflectivity)));
      }
    }
    std::copy(work.begin(), work.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  return out;
}

Tensor<float> center_crop(const Tensor<float>& x, std::int64_t size) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ConfigError("center_crop needs at least two axes");
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (size <= 0 || size > h || size > w) throw ConfigError("center crop size out of range");
  if (size == h && size == w) return x.clone();
  const std::int64_t oy = (h - size) / 2, ox = (w - size) / 2;
  Shape out_shape = s;
  out_shape[s.size() - 2] = size;
  out_shape[s.size() - 1] = size;
  Tensor<float> out = Tensor<float>::zeros(out_shape);
  const std::int64_t planes = x.numel() / (h * w);
  auto dst = out.mutable_data();
  const auto src = x.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < size; ++y)
      std::copy_n(src.begin() + (p * h + oy + y) * w + ox, size, dst.begin() + (p * size + y) * size);
  return out;
}

std::vector<DatasetWindow> window_dataset(const RadarSequence& seq, const WindowConfig& cfg) {
  if (cfg.t_in < 1 || cfg.t_out < 1 || cfg.input_cadence_minutes < 1 || cfg.output_cadence_minutes < 1 ||
      cfg.stride_frames < 1)
    throw ConfigError("window config values must be positive");
  std::vector<DatasetWindow> windows;
  const auto t = seq.length();
  if (t == 0) return windows;
  std::unordered_map<std::int32_t, std::int64_t> index_of;
  for (std::int64_t i = 0; i < t; ++i) index_of[seq.minute_offsets[static_cast<std::size_t>(i)]] = i;
  const std::int64_t h = seq.frames.shape()[1], w = seq.frames.shape()[2], plane = h * w;
  const auto src = seq.frames.data();

  auto gather = [&](const std::vector<std::int64_t>& rows) {
    Tensor<float> out = Tensor<float>::zeros({static_cast<std::int64_t>(rows.size()), h, w});
    auto dst = out.mutable_data();
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(src.begin() + rows[r] * plane, plane, dst.begin() + static_cast<std::ptrdiff_t>(r) * plane);
    return out;
  };

  for (std::int64_t start = 0; start < t; start += cfg.stride_frames) {
    DatasetWindow win;
    std::vector<std::int64_t> in_rows, out_rows;
    const std::int32_t t0 = seq.minute_offsets[static_cast<std::size_t>(start)];
    bool complete = true;
    for (int i = 0; i < cfg.t_in && complete; ++i) {
      const std::int32_t m = t0 + i * cfg.input_cadence_minutes;
      auto it = index_of.find(m);
      if (it == index_of.end()) complete = false;
      else { in_rows.push_back(it->second); win.input_minutes.push_back(m); }
    }
    const std::int32_t last = t0 + (cfg.t_in - 1) * cfg.input_cadence_minutes;
    for (int k = 1; k <= cfg.t_out && complete; ++k) {
      const std::int32_t m = last + k * cfg.output_cadence_minutes;
      auto it = index_of.find(m);
      if (it == index_of.end()) complete = false;
      else { out_rows.push_back(it->second); win.target_minutes.push_back(m); }
    }
    if (!complete) continue;
    win.sequence_id = seq.id;
    win.input = gather(in_rows);
    win.target = gather(out_rows);
    if (cfg.target_size > 0 && cfg.target_size != h) win.target = center_crop(win.target, cfg.target_size);
    windows.push_back(std::move(win));
  }
  return windows;
}

Tensor<float> normalize_dbz(const Tensor<float>& dbz) {
  Tensor<float> out = dbz.clone();
  for (auto& v : out.mutable_data()) v = std::clamp(v, 0.0f, kNormalizationRange) / kNormalizationRange;
  return out;
}

Tensor<float> denormalize_dbz(const Tensor<float>& units) {
  Tensor<float> out = units.clone();
  for (auto& v : out.mutable_data()) v = std::clamp(v * kNormalizationRange, 0.0f, kMaxReflectivity);
  return out;
}

namespace {
constexpr char kSeqMagic[4] = {'N', 'W', 'R', 'S'};
}

std::vector<std::uint8_t> encode_sequence(const RadarSequence& seq) {
  seq.validate();
  const auto& s = seq.frames.shape();
  detail::ByteWriter w;
  w.bytes(kSeqMagic, 4);
  w.uint<std::uint16_t>(kSequenceVersion);
  for (auto d : s) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.f32(seq.grid.cell_km);
  for (auto m : seq.minute_offsets) w.i32(m);
  for (float v : seq.frames.data()) w.f32(v);
  return std::move(w.buffer());
}

RadarSequence decode_sequence(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  if (r.str(4, "magic") != std::string(kSeqMagic, 4)) throw FormatError("bad sequence magic", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kSequenceVersion)
    throw FormatError("unsupported sequence version " + std::to_string(version), version_at);
  const std::size_t t_at = r.offset();
  const auto t = r.uint<std::uint32_t>("T");
  const auto h = r.uint<std::uint32_t>("H");
  const std::size_t w_at = r.offset();
  const auto w = r.uint<std::uint32_t>("W");
  if (t == 0) throw FormatError("sequence has no frames", t_at);
  if (h != w || h == 0) throw FormatError("sequence frames must be square and non-empty", w_at);
  RadarSequence seq;
  seq.grid.cell_km = r.f32("cell size");
  for (std::uint32_t i = 0; i < t; ++i) {
    const std::size_t at = r.offset();
    seq.minute_offsets.push_back(r.i32("minute offsets"));
    if (i > 0 && seq.minute_offsets[i] <= seq.minute_offsets[i - 1])
      throw FormatError("minute offsets not strictly increasing", at);
  }
  const std::uint64_t numel = std::uint64_t{t} * h * w;
  if (numel > r.remaining() / 4) r.need(numel * 4, "frame payload");
  std::vector<float> data(numel);
  for (auto& v : data) v = r.f32("frame payload");
  if (!r.at_end()) throw FormatError("trailing bytes after frame payload", r.offset());
  seq.frames = Tensor<float>({std::int64_t{t}, std::int64_t{h}, std::int64_t{w}}, std::move(data));
  return seq;
}

void write_sequence(const std::filesystem::path& path, const RadarSequence& seq) {
  detail::write_file_bytes(path.string(), encode_sequence(seq));
}

RadarSequence read_sequence(const std::filesystem::path& path) {
  auto seq = decode_sequence(detail::read_file_bytes(path.string()));
  seq.id = path.stem().string();
  return seq;
}

}  // namespace nowcast
