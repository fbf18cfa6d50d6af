#include "nowcast/autodiff.hpp"

#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename T>
Tape<T>* active_tape() {
  return active_slot<T>();
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward) {
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ConfigError("backward() requires a scalar loss");
  if (!loss.requires_grad()) throw ConfigError("loss is not connected to any tensor requiring grad");
  auto& seed = loss.node()->grad;
  seed.assign(1, T(1));
  last_visited_ = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    ++last_visited_;
    // Records not reached from the loss carry no output gradient.
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  records_.clear();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) throw ConfigError("backward() called without an active tape");
  tape->backward(loss);
}

template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace nowcast
