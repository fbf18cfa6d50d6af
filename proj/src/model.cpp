#include "nowcast/model.hpp"

#include <cmath>
#include <random>

#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

std::string level_name(int l) { return "L" + std::to_string(l); }

template <typename T>
Tensor<T> down_block(const Tensor<T>& x, const BasicConvParams<T>& p, const LayerConfig& lc,
                     double slope) {
  return leaky_relu(conv2d(x, p.weight, p.bias, lc.down_stride, lc.down_padding), slope);
}

template <typename T>
Tensor<T> up_block(const Tensor<T>& x, const BasicConvParams<T>& p, const LayerConfig& lc,
                   double slope) {
  return leaky_relu(conv_transpose2d(x, p.weight, p.bias, lc.up_stride, lc.up_padding), slope);
}

template <typename T>
LayerState<T> zero_state(std::int64_t batch, std::int64_t channels, std::int64_t side) {
  return {Tensor<T>(Shape{batch, channels, side, side}), Tensor<T>(Shape{batch, channels, side, side})};
}

}  // namespace

std::array<LayerConfig, 3> ModelConfig::default_layers() {
  std::array<LayerConfig, 3> l;
  l[0] = {16, 6, 3, 0, 64, 3, 16, 7, 3, 0};
  l[1] = {192, 5, 3, 1, 192, 3, 64, 5, 3, 1};
  l[2] = {192, 3, 2, 1, 192, 3, 192, 4, 2, 1};
  return l;
}

ModelConfig ModelConfig::production() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.t_in = 4;
  cfg.t_out = 6;
  cfg.lv_factor = 5;
  cfg.target_size = 16;
  cfg.layers[0] = {8, 3, 2, 1, 16, 3, 8, 4, 2, 1};
  cfg.layers[1] = {16, 3, 2, 1, 16, 3, 16, 4, 2, 1};
  cfg.layers[2] = {16, 3, 2, 1, 16, 3, 16, 4, 2, 1};
  cfg.head_channels = 8;
  cfg.hrrr_frames = 3;
  return cfg;
}

std::array<std::int64_t, 3> ModelConfig::level_sizes() const {
  std::array<std::int64_t, 3> sizes{};
  std::int64_t side = target_size;
  for (int l = 0; l < 3; ++l) {
    const auto& lc = layers[static_cast<std::size_t>(l)];
    side = conv_output_size(side, lc.down_kernel, lc.down_stride, lc.down_padding);
    sizes[static_cast<std::size_t>(l)] = side;
  }
  return sizes;
}

void ModelConfig::validate() const {
  if (t_in < 1 || t_out < 1) throw ConfigError("t_in and t_out must be >= 1");
  if (lv_factor < 1 || target_size < 1) throw ConfigError("lv_factor and target_size must be >= 1");
  if (group_norm_groups < 1) throw ConfigError("group_norm_groups must be >= 1");
  if (use_hrrr && hrrr_frames < 2) throw ConfigError("hrrr_frames must be >= 2");
  for (const auto& lc : layers) {
    if (lc.cell_kernel % 2 != 1) throw ConfigError("cell kernel must be odd");
    if ((4 * lc.hidden_channels) % group_norm_groups != 0)
      throw ConfigError("gate channels not divisible by group_norm_groups");
  }
  if (head_kernel % 2 != 1) throw ConfigError("head kernel must be odd");
  const auto sizes = level_sizes();
  std::int64_t prev = target_size;
  for (auto s : sizes) {
    if (s >= prev) throw ConfigError("encoder chain must strictly shrink the spatial size");
    prev = s;
  }
  const std::array<std::int64_t, 3> targets{target_size, sizes[0], sizes[1]};
  for (int l = 0; l < 3; ++l) {
    const auto& lc = layers[static_cast<std::size_t>(l)];
    const auto up = conv_transpose_output_size(sizes[static_cast<std::size_t>(l)], lc.up_kernel,
                                               lc.up_stride, lc.up_padding);
    if (up != targets[static_cast<std::size_t>(l)])
      throw ConfigError(level_name(l) + " up-convolution maps " +
                        std::to_string(sizes[static_cast<std::size_t>(l)]) + " to " +
                        std::to_string(up) + ", expected " +
                        std::to_string(targets[static_cast<std::size_t>(l)]));
  }
}

std::vector<std::pair<std::string, Shape>> parameter_manifest(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> m;
  const auto& L = cfg.layers;
  m.push_back({"hidden-state-weights", {cfg.t_in}});
  for (int l = 0; l < 3; ++l) {
    const auto& lc = L[static_cast<std::size_t>(l)];
    const std::int64_t in = l == 0 ? cfg.input_channels() : L[static_cast<std::size_t>(l - 1)].hidden_channels;
    const std::string p = level_name(l) + "-encoder-";
    const std::int64_t gates = 4 * lc.hidden_channels;
    m.push_back({p + "downsconv-weight", {lc.down_channels, in, lc.down_kernel, lc.down_kernel}});
    m.push_back({p + "downsconv-bias", {lc.down_channels}});
    m.push_back({p + "convlstmcell-weight",
                 {gates, lc.down_channels + lc.hidden_channels, lc.cell_kernel, lc.cell_kernel}});
    m.push_back({p + "convlstmcell-bias", {gates}});
    m.push_back({p + "groupnorm-weight", {gates}});
    m.push_back({p + "groupnorm-bias", {gates}});
  }
  if (cfg.use_hrrr) {
    for (int l = 0; l < 3; ++l) {
      const auto& lc = L[static_cast<std::size_t>(l)];
      const std::int64_t in = l == 0 ? 1 : L[static_cast<std::size_t>(l - 1)].down_channels;
      const std::string p = "hrrr-conditioning-downconv-" + std::to_string(l) + "-";
      m.push_back({p + "weight", {lc.down_channels, in, lc.down_kernel, lc.down_kernel}});
      m.push_back({p + "bias", {lc.down_channels}});
    }
  }
  for (int l = 2; l >= 0; --l) {
    const auto& lc = L[static_cast<std::size_t>(l)];
    const std::int64_t in = l == 2 ? L[2].down_channels : L[static_cast<std::size_t>(l + 1)].up_channels;
    const std::string p = level_name(l) + "-forecaster-";
    const std::int64_t gates = 4 * lc.hidden_channels;
    m.push_back({p + "convlstmcell-weight",
                 {gates, in + lc.hidden_channels, lc.cell_kernel, lc.cell_kernel}});
    m.push_back({p + "convlstmcell-bias", {gates}});
    m.push_back({p + "groupnorm-weight", {gates}});
    m.push_back({p + "groupnorm-bias", {gates}});
    m.push_back({p + "upconv-weight", {lc.hidden_channels, lc.up_channels, lc.up_kernel, lc.up_kernel}});
    m.push_back({p + "upconv-bias", {lc.up_channels}});
  }
  m.push_back({"final-conv.0.weight", {cfg.head_channels, L[0].up_channels, cfg.head_kernel, cfg.head_kernel}});
  m.push_back({"final-conv.0.bias", {cfg.head_channels}});
  m.push_back({"final-conv.2.weight", {1, cfg.head_channels, 1, 1}});
  m.push_back({"final-conv.2.bias", {1}});
  return m;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> BasicModelParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("hidden-state-weights", bridge_weights);
  for (int l = 0; l < 3; ++l) {
    const std::string p = level_name(l) + "-encoder-";
    const auto& d = encoder_down[static_cast<std::size_t>(l)];
    const auto& c = encoder_cells[static_cast<std::size_t>(l)];
    out.emplace_back(p + "downsconv-weight", d.weight);
    out.emplace_back(p + "downsconv-bias", d.bias);
    out.emplace_back(p + "convlstmcell-weight", c.gate_weight);
    out.emplace_back(p + "convlstmcell-bias", c.gate_bias);
    out.emplace_back(p + "groupnorm-weight", c.gn_gamma);
    out.emplace_back(p + "groupnorm-bias", c.gn_beta);
  }
  for (int l = 0; l < 3; ++l) {
    const auto& h = hrrr_down[static_cast<std::size_t>(l)];
    if (!h.weight.defined()) continue;
    const std::string p = "hrrr-conditioning-downconv-" + std::to_string(l) + "-";
    out.emplace_back(p + "weight", h.weight);
    out.emplace_back(p + "bias", h.bias);
  }
  for (int l = 2; l >= 0; --l) {
    const std::string p = level_name(l) + "-forecaster-";
    const auto& c = forecaster_cells[static_cast<std::size_t>(l)];
    const auto& u = forecaster_up[static_cast<std::size_t>(l)];
    out.emplace_back(p + "convlstmcell-weight", c.gate_weight);
    out.emplace_back(p + "convlstmcell-bias", c.gate_bias);
    out.emplace_back(p + "groupnorm-weight", c.gn_gamma);
    out.emplace_back(p + "groupnorm-bias", c.gn_beta);
    out.emplace_back(p + "upconv-weight", u.weight);
    out.emplace_back(p + "upconv-bias", u.bias);
  }
  out.emplace_back("final-conv.0.weight", head_conv.weight);
  out.emplace_back("final-conv.0.bias", head_conv.bias);
  out.emplace_back("final-conv.2.weight", head_out.weight);
  out.emplace_back("final-conv.2.bias", head_out.bias);
  return out;
}

template <typename T>
std::vector<Tensor<T>> BasicModelParams<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t BasicModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.numel();
  return n;
}

namespace {

template <typename U, typename T>
Tensor<U> cast_defined(const Tensor<T>& t) {
  if (!t.defined()) return {};
  if constexpr (std::is_same_v<U, T>) return t.clone();
  else return cast<U>(t);
}

template <typename U, typename T>
BasicConvParams<U> cast_conv(const BasicConvParams<T>& p) {
  return {cast_defined<U>(p.weight), cast_defined<U>(p.bias)};
}

template <typename U, typename T>
BasicCellParams<U> cast_cell(const BasicCellParams<T>& p) {
  return {cast_defined<U>(p.gate_weight), cast_defined<U>(p.gate_bias), cast_defined<U>(p.gn_gamma),
          cast_defined<U>(p.gn_beta)};
}

}  // namespace

template <typename T>
template <typename U>
BasicModelParams<U> BasicModelParams<T>::cast_to() const {
  BasicModelParams<U> out;
  out.bridge_weights = cast_defined<U>(bridge_weights);
  for (std::size_t l = 0; l < 3; ++l) {
    out.encoder_down[l] = cast_conv<U>(encoder_down[l]);
    out.encoder_cells[l] = cast_cell<U>(encoder_cells[l]);
    out.hrrr_down[l] = cast_conv<U>(hrrr_down[l]);
    out.forecaster_cells[l] = cast_cell<U>(forecaster_cells[l]);
    out.forecaster_up[l] = cast_conv<U>(forecaster_up[l]);
  }
  out.head_conv = cast_conv<U>(head_conv);
  out.head_out = cast_conv<U>(head_out);
  return out;
}

template <typename T>
BasicModelParams<T> BasicModelParams<T>::clone() const {
  return cast_to<T>();
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto manifest = parameter_manifest(cfg);
  std::size_t next = 0;
  // Draws tensors in manifest order so the stream is stable per config.
  auto make = [&] {
    const auto& [name, shape] = manifest.at(next++);
    Tensor<float> t(shape);
    auto d = t.mutable_data();
    const bool is_kernel = shape.size() == 4;
    const bool is_gamma = name.find("groupnorm-weight") != std::string::npos;
    if (is_kernel) {
      // dim 1 is Cin for convolutions and Cout for transposed ones.
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : d) v = static_cast<float>(dist(rng));
    } else if (is_gamma) {
      std::fill(d.begin(), d.end(), 1.0f);
    }
    return t;
  };

  ModelParams p;
  p.bridge_weights = make();
  p.bridge_weights.mutable_data().back() = 1.0f;
  for (std::size_t l = 0; l < 3; ++l) {
    p.encoder_down[l].weight = make();
    p.encoder_down[l].bias = make();
    auto& c = p.encoder_cells[l];
    c.gate_weight = make();
    c.gate_bias = make();
    c.gn_gamma = make();
    c.gn_beta = make();
  }
  if (cfg.use_hrrr) {
    for (std::size_t l = 0; l < 3; ++l) {
      p.hrrr_down[l].weight = make();
      p.hrrr_down[l].bias = make();
    }
  }
  for (int l = 2; l >= 0; --l) {
    auto& c = p.forecaster_cells[static_cast<std::size_t>(l)];
    c.gate_weight = make();
    c.gate_bias = make();
    c.gn_gamma = make();
    c.gn_beta = make();
    auto& u = p.forecaster_up[static_cast<std::size_t>(l)];
    u.weight = make();
    u.bias = make();
  }
  p.head_conv.weight = make();
  p.head_conv.bias = make();
  p.head_out.weight = make();
  p.head_out.bias = make();
  for (auto& t : p.tensors()) {
    auto copy = t;
    copy.set_requires_grad(true);
  }
  return p;
}

template <typename T>
Tensor<T> lv_stack(const Tensor<T>& frame, int factor) {
  if (frame.rank() != 4 || frame.dim(1) != 1)
    throw ConfigError("lv_stack expects [B,1,H,W], got " + to_string(frame.shape()));
  if (factor < 1) throw ConfigError("lv factor must be >= 1");
  const std::int64_t batch = frame.dim(0), h = frame.dim(2), w = frame.dim(3);
  if (h != w || h % factor != 0)
    throw ConfigError("lv_stack: side " + std::to_string(h) + " not divisible by " +
                      std::to_string(factor));
  const std::int64_t s = h / factor;
  const std::int64_t f2 = static_cast<std::int64_t>(factor) * factor;
  // out[b, r*F+c, i, j] = in[b, 0, r*S+i, c*S+j]
  std::vector<std::int64_t> src_index(static_cast<std::size_t>(f2 * s * s));
  for (std::int64_t r = 0; r < factor; ++r)
    for (std::int64_t c = 0; c < factor; ++c)
      for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t j = 0; j < s; ++j)
          src_index[static_cast<std::size_t>(((r * factor + c) * s + i) * s + j)] =
              (r * s + i) * h + c * s + j;
  const std::int64_t n = h * w;
  std::vector<T> out(static_cast<std::size_t>(batch * n));
  const T* in = frame.data().data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t k = 0; k < n; ++k) out[b * n + k] = in[b * n + src_index[k]];
  auto* xn = frame.node().get();
  return detail::make_result<T>(
      Shape{batch, f2, s, s}, std::move(out), {&frame},
      [=, idx = std::move(src_index)](detail::TensorNode<T>* yn) {
        return [=] {
          xn->ensure_grad();
          for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t k = 0; k < n; ++k) xn->grad[b * n + idx[k]] += yn->grad[b * n + k];
        };
      });
}

template <typename T>
Tensor<T> lv_unstack(const Tensor<T>& stacked, int factor) {
  if (stacked.rank() != 4) throw ConfigError("lv_unstack expects [B,F*F,S,S]");
  const std::int64_t f2 = static_cast<std::int64_t>(factor) * factor;
  if (factor < 1 || stacked.dim(1) != f2)
    throw ConfigError("lv_unstack: " + std::to_string(stacked.dim(1)) + " channels, expected " +
                      std::to_string(f2));
  const std::int64_t batch = stacked.dim(0), s = stacked.dim(2), side = s * factor;
  std::vector<T> out(stacked.numel());
  const T* in = stacked.data().data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t r = 0; r < factor; ++r)
      for (std::int64_t c = 0; c < factor; ++c)
        for (std::int64_t i = 0; i < s; ++i)
          for (std::int64_t j = 0; j < s; ++j)
            out[b * side * side + (r * s + i) * side + c * s + j] =
                in[((b * f2 + r * factor + c) * s + i) * s + j];
  return Tensor<T>(Shape{batch, 1, side, side}, std::move(out));
}

template <typename T>
Tensor<T> lv_stack_sequence(const Tensor<T>& x, int factor) {
  if (x.rank() != 5 || x.dim(2) != 1)
    throw ConfigError("lv_stack_sequence expects [B,T,1,H,W], got " + to_string(x.shape()));
  const std::int64_t b = x.dim(0), t = x.dim(1);
  auto flat = x.reshape({b * t, 1, x.dim(3), x.dim(4)});
  auto stacked = lv_stack(flat, factor);
  return stacked.reshape({b, t, stacked.dim(1), stacked.dim(2), stacked.dim(3)});
}

template <typename T>
LayerState<T> convlstm_cell_step(const Tensor<T>& x, const LayerState<T>& state,
                                 const BasicCellParams<T>& params, int groups, double eps) {
  const auto& w = params.gate_weight;
  if (w.rank() != 4 || w.dim(0) % 4 != 0) throw ConfigError("gate weight must be [4*Ch,Cx+Ch,k,k]");
  const std::int64_t ch = w.dim(0) / 4;
  if (state.h.shape() != state.c.shape() || state.h.dim(1) != ch)
    throw ConfigError("cell state " + to_string(state.h.shape()) + " does not match gate weight " +
                      to_string(w.shape()));
  if (x.dim(1) + ch != w.dim(1))
    throw ConfigError("cell input width " + std::to_string(x.dim(1)) + " + hidden " +
                      std::to_string(ch) + " does not match gate weight " + to_string(w.shape()));
  const int k = static_cast<int>(w.dim(2));
  auto gates = conv2d(concat_channels<T>({x, state.h}), w, params.gate_bias, 1, k / 2);
  gates = group_norm(gates, groups, params.gn_gamma, params.gn_beta, eps);
  auto i = sigmoid(slice_channels(gates, 0, ch));
  auto f = sigmoid(slice_channels(gates, ch, ch));
  auto g = tanh(slice_channels(gates, 2 * ch, ch));
  auto o = sigmoid(slice_channels(gates, 3 * ch, ch));
  auto c_next = add(mul(f, state.c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

template <typename T>
EncoderOutput<T> encode(const Tensor<T>& frames, const BasicModelParams<T>& params,
                        const ModelConfig& cfg) {
  if (frames.rank() != 5) throw ConfigError("encode expects [B,T,C,S,S]");
  const std::int64_t batch = frames.dim(0), steps = frames.dim(1);
  if (frames.dim(2) != cfg.input_channels() || frames.dim(3) != cfg.target_size)
    throw ConfigError("encoder input " + to_string(frames.shape()) + " does not match config");
  const auto sizes = cfg.level_sizes();
  std::array<LayerState<T>, 3> state;
  for (std::size_t l = 0; l < 3; ++l)
    state[l] = zero_state<T>(batch, cfg.layers[l].hidden_channels, sizes[l]);
  std::array<std::vector<Tensor<T>>, 3> hidden;
  for (std::int64_t t = 0; t < steps; ++t) {
    Tensor<T> x = time_frame(frames, t);
    for (std::size_t l = 0; l < 3; ++l) {
      auto d = down_block(x, params.encoder_down[l], cfg.layers[l], cfg.leaky_slope);
      state[l] = convlstm_cell_step(d, state[l], params.encoder_cells[l], cfg.group_norm_groups,
                                    cfg.group_norm_eps);
      hidden[l].push_back(state[l].h);
      x = state[l].h;
    }
  }
  EncoderOutput<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    out.hidden_stacks[l] = stack_time(hidden[l]);
    out.final_cells[l] = state[l].c;
  }
  return out;
}

template <typename T>
Tensor<T> bridge_hidden(const Tensor<T>& hidden_stack, const Tensor<T>& w) {
  auto h = temporal_weighted_sum(hidden_stack, w);
  return h.reshape({h.dim(0), h.dim(2), h.dim(3), h.dim(4)});
}

template <typename T>
std::array<LayerState<T>, 3> bridge_states(const EncoderOutput<T>& enc,
                                           const BasicModelParams<T>& params) {
  std::array<LayerState<T>, 3> out;
  for (std::size_t l = 0; l < 3; ++l)
    out[l] = {bridge_hidden(enc.hidden_stacks[l], params.bridge_weights), enc.final_cells[l]};
  return out;
}

template <typename T>
Tensor<T> hrrr_encode(const Tensor<T>& hrrr_frames, const BasicModelParams<T>& params,
                      const ModelConfig& cfg) {
  if (hrrr_frames.rank() != 5 || hrrr_frames.dim(2) != 1 || hrrr_frames.dim(3) != cfg.target_size ||
      hrrr_frames.dim(4) != cfg.target_size)
    throw ConfigError("HRRR frames must be [B,K,1,S,S] with S=" + std::to_string(cfg.target_size) +
                      ", got " + to_string(hrrr_frames.shape()));
  if (hrrr_frames.dim(1) < 2) throw ConfigError("HRRR conditioning needs at least 2 frames");
  if (!params.hrrr_down[0].weight.defined())
    throw ConfigError("parameters carry no HRRR conditioning weights");
  const std::int64_t batch = hrrr_frames.dim(0);
  auto interp = temporal_linear_interp(hrrr_frames, cfg.t_out);
  // Fold time into batch so each stage is a single convolution.
  Tensor<T> x = interp.reshape({batch * cfg.t_out, 1, cfg.target_size, cfg.target_size});
  for (std::size_t l = 0; l < 3; ++l) x = down_block(x, params.hrrr_down[l], cfg.layers[l], cfg.leaky_slope);
  return x.reshape({batch, cfg.t_out, x.dim(1), x.dim(2), x.dim(3)});
}

template <typename T>
Tensor<T> forecast(const std::array<LayerState<T>, 3>& initial,
                   const std::optional<std::type_identity_t<Tensor<T>>>& conditioning,
                   const BasicModelParams<T>& params,
                   const ModelConfig& cfg) {
  const auto sizes = cfg.level_sizes();
  const std::int64_t batch = initial[2].h.dim(0);
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape want{batch, cfg.layers[l].hidden_channels, sizes[l], sizes[l]};
    if (initial[l].h.shape() != want || initial[l].c.shape() != want)
      throw ConfigError(level_name(static_cast<int>(l)) + " forecaster state " +
                        to_string(initial[l].h.shape()) + " expected " + to_string(want));
  }
  const Shape cond_shape{batch, cfg.layers[2].down_channels, sizes[2], sizes[2]};
  if (conditioning) {
    const Shape want{batch, cfg.t_out, cond_shape[1], cond_shape[2], cond_shape[3]};
    if (conditioning->shape() != want)
      throw ConfigError("conditioning " + to_string(conditioning->shape()) + " expected " +
                        to_string(want));
  }
  const Tensor<T> zero_cond(cond_shape);
  auto state = initial;
  std::vector<Tensor<T>> out_frames;
  out_frames.reserve(static_cast<std::size_t>(cfg.t_out));
  for (std::int64_t t = 0; t < cfg.t_out; ++t) {
    Tensor<T> x = conditioning ? time_frame(*conditioning, t) : zero_cond;
    for (int l = 2; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      state[li] = convlstm_cell_step(x, state[li], params.forecaster_cells[li],
                                     cfg.group_norm_groups, cfg.group_norm_eps);
      x = up_block(state[li].h, params.forecaster_up[li], cfg.layers[li], cfg.leaky_slope);
    }
    auto y = leaky_relu(conv2d(x, params.head_conv.weight, params.head_conv.bias, 1, cfg.head_kernel / 2),
                        cfg.leaky_slope);
    out_frames.push_back(conv2d(y, params.head_out.weight, params.head_out.bias, 1, 0));
  }
  return stack_time(out_frames);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& frames, const std::optional<std::type_identity_t<Tensor<T>>>& hrrr,
                  const BasicModelParams<T>& params, const ModelConfig& cfg) {
  if (frames.rank() != 5) throw ConfigError("forward expects a [B,T,C,H,W] input window");
  if (frames.dim(1) != cfg.t_in)
    throw ConfigError("input window has " + std::to_string(frames.dim(1)) + " frames, expected " +
                      std::to_string(cfg.t_in));
  Tensor<T> x = frames;
  if (cfg.use_lv && frames.dim(2) == 1 && frames.dim(3) == cfg.input_side())
    x = lv_stack_sequence(frames, cfg.lv_factor);
  auto enc = encode(x, params, cfg);
  auto states = bridge_states(enc, params);
  std::optional<Tensor<T>> cond;
  if (cfg.use_hrrr) {
    if (!hrrr) throw ConfigError("configuration uses HRRR conditioning but none was supplied");
    cond = hrrr_encode(*hrrr, params, cfg);
  }
  return forecast(states, cond, params, cfg);
}

#define NOWCAST_INSTANTIATE_MODEL(T)                                                              \
  template struct BasicModelParams<T>;                                                            \
  template Tensor<T> lv_stack(const Tensor<T>&, int);                                             \
  template Tensor<T> lv_unstack(const Tensor<T>&, int);                                           \
  template Tensor<T> lv_stack_sequence(const Tensor<T>&, int);                                    \
  template LayerState<T> convlstm_cell_step(const Tensor<T>&, const LayerState<T>&,               \
                                            const BasicCellParams<T>&, int, double);              \
  template EncoderOutput<T> encode(const Tensor<T>&, const BasicModelParams<T>&,                  \
                                   const ModelConfig&);                                           \
  template Tensor<T> bridge_hidden(const Tensor<T>&, const Tensor<T>&);                           \
  template std::array<LayerState<T>, 3> bridge_states(const EncoderOutput<T>&,                   \
                                                      const BasicModelParams<T>&);               \
  template Tensor<T> hrrr_encode(const Tensor<T>&, const BasicModelParams<T>&, const ModelConfig&); \
  template Tensor<T> forecast(const std::array<LayerState<T>, 3>&, const std::optional<Tensor<T>>&, \
                              const BasicModelParams<T>&, const ModelConfig&);                    \
  template Tensor<T> forward(const Tensor<T>&, const std::optional<Tensor<T>>&,                   \
                             const BasicModelParams<T>&, const ModelConfig&);

NOWCAST_INSTANTIATE_MODEL(float)
NOWCAST_INSTANTIATE_MODEL(double)

template BasicModelParams<double> BasicModelParams<float>::cast_to<double>() const;
template BasicModelParams<float> BasicModelParams<double>::cast_to<float>() const;

}  // namespace nowcast
