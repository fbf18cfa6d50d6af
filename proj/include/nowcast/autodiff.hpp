#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

// Wengert list of the operations recorded during one forward pass.
// Operations record themselves on the tape that is active on the calling
// thread (see TapeScope) whenever at least one input requires a gradient.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::TensorNode<T>>;
  // Reads output->grad and accumulates into the grads of the inputs.
  using BackwardFn = std::function<void()>;

  struct Record {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1, replays every record in reverse order and
  // then clears the tape. Throws ConfigError if loss is not a scalar.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Number of records whose backward rule ran during the last backward().
  std::size_t last_visited() const { return last_visited_; }

 private:
  std::vector<Record> records_;
  std::size_t last_visited_ = 0;
};

template <typename T>
Tape<T>* active_tape();

// Installs a tape as the active one for the current thread for the lifetime
// of the scope. Nested scopes restore the previous tape on exit.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Convenience: backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

template <typename T>
bool any_requires_grad(const std::vector<const Tensor<T>*>& inputs) {
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Wraps a freshly computed buffer as an op output. If an active tape exists
// and any input requires a gradient, the output requires a gradient too and
// `make_backward(out_node)` is called to build the backward rule.
template <typename T, typename MakeBackward>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<const Tensor<T>*>& inputs,
                      MakeBackward&& make_backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr || !any_requires_grad(inputs)) return out;
  out.node()->requires_grad = true;
  std::vector<typename Tape<T>::NodePtr> nodes;
  nodes.reserve(inputs.size());
  for (const auto* t : inputs) nodes.push_back(t->node());
  tape->record(std::move(nodes), out.node(), make_backward(out.node().get()));
  return out;
}

}  // namespace detail

extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace nowcast
