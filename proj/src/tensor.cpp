#include "nowcast/tensor.hpp"

#include <cmath>
#include <sstream>

#include "nowcast/autodiff.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::TensorNode<T>>()) {
  node_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::TensorNode<T>>()) {
  if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
    throw ConfigError("buffer of length " + std::to_string(data.size()) + " does not match shape " +
                      to_string(shape));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ConfigError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ConfigError("index rank mismatch for shape " + to_string(s));
  std::int64_t flat = 0;
  std::size_t d = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[d]) throw ConfigError("index out of range for shape " + to_string(s));
    flat = flat * s[d] + i;
    ++d;
  }
  return node_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  if (numel_of(new_shape) != static_cast<std::int64_t>(numel()))
    throw ConfigError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
  auto* in = node_.get();
  return detail::make_result<T>(std::move(new_shape), node_->data, {this}, [in](auto* out) {
    return [in, out] {
      in->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) in->grad[i] += out->grad[i];
    };
  });
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : node_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace nowcast
