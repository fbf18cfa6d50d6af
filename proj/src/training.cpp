#include "nowcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "nowcast/autodiff.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

void TrainConfig::validate() const {
  if (learning_rate < 0 || weight_decay < 0) throw ConfigError("learning_rate and weight_decay must be >= 0");
  if (!(grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0))
    throw ConfigError("Adam betas must be in [0,1) and eps positive");
  if (!(swa_start_fraction >= 0 && swa_start_fraction < 1)) throw ConfigError("swa_start_fraction must be in [0,1)");
  if (swa_every_steps < 1 || batch_size < 1 || total_steps < 0 || smoothing_window < 1 || checkpoint_every < 0)
    throw ConfigError("step counts must be positive");
  if (bmae_weights.size() != bmae_breakpoints.size() + 1)
    throw ConfigError("bmae_weights needs one more entry than bmae_breakpoints");
}

int TrainConfig::swa_start_step() const {
  return static_cast<int>(std::floor(swa_start_fraction * total_steps));
}

template <typename T>
Tensor<T> bmae_pixel_weights(const Tensor<T>& truth_dbz, const std::vector<double>& breakpoints,
                             const std::vector<double>& weights) {
  if (weights.size() != breakpoints.size() + 1)
    throw ConfigError("bmae weights need exactly one more entry than breakpoints");
  for (std::size_t i = 1; i < breakpoints.size(); ++i)
    if (!(breakpoints[i] > breakpoints[i - 1])) throw ConfigError("bmae breakpoints must be strictly increasing");
  Tensor<T> out = Tensor<T>::zeros(truth_dbz.shape());
  auto dst = out.mutable_data();
  const auto src = truth_dbz.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto bin = std::upper_bound(breakpoints.begin(), breakpoints.end(), static_cast<double>(src[i])) -
                     breakpoints.begin();
    dst[i] = static_cast<T>(weights[static_cast<std::size_t>(bin)]);
  }
  return out;
}

template <typename T>
Tensor<T> weighted_mae_mse_loss(const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& w) {
  if (pred.shape() != truth.shape() || pred.shape() != w.shape())
    throw ConfigError("loss: shape mismatch " + to_string(pred.shape()) + " / " + to_string(truth.shape()) +
                      " / " + to_string(w.shape()));
  const auto p = pred.data(), t = truth.data(), wt = w.data();
  const std::size_t n = p.size();
  if (n == 0) throw ConfigError("loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += static_cast<double>(wt[i]) * (std::abs(d) + d * d);
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  auto* pn = pred.node().get();
  auto tn = truth.node();
  auto wn = w.node();
  return detail::make_result<T>(Shape{}, std::vector<T>{static_cast<T>(acc * inv)}, {&pred}, [=](auto* yn) {
    return [=] {
      pn->ensure_grad();
      const double g = static_cast<double>(yn->grad[0]) * inv;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pn->data[i]) - static_cast<double>(tn->data[i]);
        const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        pn->grad[i] += static_cast<T>(g * static_cast<double>(wn->data[i]) * (sign + 2.0 * d));
      }
    };
  });
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& params, double max_norm) {
  if (!(max_norm > 0)) throw ConfigError("clip max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * scale);
  }
  return scale;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::init(const std::vector<Tensor<T>>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size()) throw ConfigError("optimizer state does not match the parameter list");
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto theta = p.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != theta.size()) throw ConfigError("optimizer moment buffer has the wrong size");
    const bool has = p.has_grad();
    std::span<const T> grad;
    if (has) grad = std::as_const(p).grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (has ? static_cast<double>(grad[i]) : 0.0) + cfg.weight_decay * static_cast<double>(theta[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

template <typename T>
void swa_update(OptimizerState<T>& state, const std::vector<Tensor<T>>& params) {
  if (state.swa_sum.empty())
    for (const auto& p : params) state.swa_sum.emplace_back(p.numel(), 0.0);
  if (state.swa_sum.size() != params.size()) throw ConfigError("SWA buffers do not match the parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto d = params[k].data();
    for (std::size_t i = 0; i < d.size(); ++i) state.swa_sum[k][i] += static_cast<double>(d[i]);
  }
  state.swa_count += 1;
}

template <typename T>
std::vector<Tensor<T>> swa_finalize(const OptimizerState<T>& state, const std::vector<Tensor<T>>& like) {
  if (state.swa_count == 0) throw ConfigError("swa_finalize called before any snapshot");
  if (like.size() != state.swa_sum.size()) throw ConfigError("SWA buffers do not match the parameter list");
  std::vector<Tensor<T>> out;
  const double n = static_cast<double>(state.swa_count);
  for (std::size_t k = 0; k < like.size(); ++k) {
    Tensor<T> t = Tensor<T>::zeros(like[k].shape());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(state.swa_sum[k][i] / n);
    out.push_back(std::move(t));
  }
  return out;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os << "step,raw_loss,smoothed_loss\n" << std::setprecision(9);
  for (const auto& r : trace) os << r.step << ',' << r.raw << ',' << r.smoothed << '\n';
  return os.str();
}

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t dataset_size, const TrainConfig& cfg) {
  if (dataset_size == 0) throw ConfigError("training dataset is empty");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<std::vector<std::size_t>> out;
  for (int s = 0; s < cfg.total_steps; ++s) {
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order.resize(dataset_size);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

namespace {

Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& items) {
  Shape shape = items.front()->shape();
  shape.insert(shape.begin(), static_cast<std::int64_t>(items.size()));
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(numel_of(shape)));
  for (const auto* t : items) {
    if (t->shape() != items.front()->shape()) throw ConfigError("training samples have mismatched shapes");
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

}  // namespace

TrainResult train_loop(const ModelParams& initial, const ModelConfig& model_cfg,
                       const std::vector<TrainingSample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  const auto schedule = batch_schedule(dataset.size(), cfg);
  TrainResult result;
  result.params = initial.clone();
  auto params = result.params.tensors();
  for (auto& p : params) p.set_requires_grad(true);
  auto state = OptimizerState<float>::init(params);
  const int swa_start = cfg.swa_start_step();

  // Loss weights depend only on the truth, so compute them once per sample.
  std::vector<Tensor<float>> weights;
  for (const auto& s : dataset)
    weights.push_back(bmae_pixel_weights(s.target_dbz, cfg.bmae_breakpoints, cfg.bmae_weights));

  std::deque<double> window;
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<const Tensor<float>*> in, tg, wt, hr;
    for (auto idx : schedule[static_cast<std::size_t>(step)]) {
      in.push_back(&dataset[idx].input);
      tg.push_back(&dataset[idx].target);
      wt.push_back(&weights[idx]);
      if (model_cfg.use_hrrr) {
        if (!dataset[idx].hrrr) throw ConfigError("HRRR variant needs surrogate frames in every sample");
        hr.push_back(&*dataset[idx].hrrr);
      }
    }
    const Tensor<float> x = stack_batch(in), y = stack_batch(tg), w = stack_batch(wt);
    std::optional<Tensor<float>> h;
    if (model_cfg.use_hrrr) h = stack_batch(hr);

    Tape<float> tape;
    double raw = 0.0;
    {
      TapeScope<float> scope(tape);
      const Tensor<float> pred = forward(x, h, result.params, model_cfg);
      const Tensor<float> loss = weighted_mae_mse_loss(pred, y, w);
      raw = static_cast<double>(loss.item());
      if (!std::isfinite(raw))
        throw NumericError("non-finite training loss at step " + std::to_string(step));
      tape.backward(loss);
    }
    clip_global_norm(params, cfg.grad_clip_norm);
    adam_step(params, state, cfg);
    for (auto& p : params) p.zero_grad();

    if (step + 1 > swa_start && (step + 1 - swa_start) % cfg.swa_every_steps == 0) swa_update(state, params);

    window.push_back(raw);
    if (static_cast<int>(window.size()) > cfg.smoothing_window) {
      window.pop_front();
    }
    const double smoothed = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
    result.trace.push_back({step, raw, smoothed});

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (step + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << (step + 1) << ".msnc";
      save_params(cfg.checkpoint_dir / name.str(), result.params);
    }
  }

  if (state.swa_count > 0) {
    auto averaged = swa_finalize(state, params);
    ModelParams swa = result.params.clone();
    auto slots = swa.tensors();
    for (std::size_t k = 0; k < slots.size(); ++k) {
      auto dst = slots[k].mutable_data();
      const auto src = averaged[k].data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    result.swa_params = std::move(swa);
  }
  for (auto& p : params) p.set_requires_grad(false);
  return result;
}

template Tensor<float> bmae_pixel_weights(const Tensor<float>&, const std::vector<double>&, const std::vector<double>&);
template Tensor<double> bmae_pixel_weights(const Tensor<double>&, const std::vector<double>&, const std::vector<double>&);
template Tensor<float> weighted_mae_mse_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> weighted_mae_mse_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template double global_grad_norm(const std::vector<Tensor<float>>&);
template double global_grad_norm(const std::vector<Tensor<double>>&);
template double clip_global_norm(std::vector<Tensor<float>>&, double);
template double clip_global_norm(std::vector<Tensor<double>>&, double);
template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step(std::vector<Tensor<float>>&, OptimizerState<float>&, const TrainConfig&);
template void adam_step(std::vector<Tensor<double>>&, OptimizerState<double>&, const TrainConfig&);
template void swa_update(OptimizerState<float>&, const std::vector<Tensor<float>>&);
template void swa_update(OptimizerState<double>&, const std::vector<Tensor<double>>&);
template std::vector<Tensor<float>> swa_finalize(const OptimizerState<float>&, const std::vector<Tensor<float>>&);
template std::vector<Tensor<double>> swa_finalize(const OptimizerState<double>&, const std::vector<Tensor<double>>&);

}  // namespace nowcast
