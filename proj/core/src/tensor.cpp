#include "ilnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ilnet {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw TensorError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), value);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw TensorError("value count " + std::to_string(values.size()) +
                      " does not match shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

std::span<const float> Tensor::grad() const {
  if (data_->grad.empty()) {
    throw TensorError("gradient not populated; run backward() first");
  }
  return data_->grad;
}

float Tensor::item() const {
  if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
  return data_->values[0];
}

GradTape& GradTape::get() {
  static GradTape tape;
  return tape;
}

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw TensorError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (nodes_.empty()) {
    throw TensorError("backward() on an empty graph; the record was already consumed or never built");
  }
  if (nodes_.back().out != loss.data()) {
    // the loss must be connected to the record; cheapest valid check is that
    // some node produced it
    bool found = false;
    for (const auto& n : nodes_) {
      if (n.out == loss.data()) {
        found = true;
        break;
      }
    }
    if (!found) throw TensorError("backward(): loss tensor is detached from the recorded graph");
  }
  loss.data()->ensure_grad();
  loss.data()->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // node does not feed the loss
    it->backward();
  }
  nodes_.clear();
}

void check_finite(std::span<const float> v, const char* op) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw TensorError(std::string(op) + ": non-finite value " + std::to_string(v[i]) +
                        " at flat index " + std::to_string(i));
    }
  }
}

}  // namespace ilnet
