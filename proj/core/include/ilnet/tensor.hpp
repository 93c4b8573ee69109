#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilnet {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension sizes, outermost first. Feature maps are [N,C,H,W].
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // same size as values once touched by backward
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0f);
  }
};

// Value-semantic handle to shared storage. Forward ops return fresh tensors;
// storage written by a producing op is never mutated afterwards (parameter
// updates go through mutable_values between steps, outside any graph).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int rank() const { return static_cast<int>(data_->shape.size()); }
  int dim(int i) const { return data_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return data_->numel(); }

  std::span<const float> values() const { return data_->values; }
  // In-place access for optimizers and test scaffolding; never call on a
  // tensor that still participates in a live tape.
  std::span<float> mutable_values() { return data_->values; }

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    data_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const float> grad() const;
  void zero_grad() {
    if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0f);
  }

  float item() const;  // scalar tensors only

  const std::shared_ptr<TensorData>& data() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : data_(std::move(d)) {}
  std::shared_ptr<TensorData> data_;
};

// One recorded operation. backward reads out->grad and accumulates into the
// grads of whatever the closure captured.
struct TapeNode {
  const char* op;
  std::shared_ptr<TensorData> out;
  std::function<void()> backward;
};

// Execution-ordered operation record for reverse-mode differentiation.
// Confined to a single training worker; the record order is a topological
// order by construction, and backward() visits it exactly once in reverse.
class GradTape {
 public:
  static GradTape& get();

  bool recording() const { return enabled_ && depth_ == 0; }
  void push(TapeNode node) { nodes_.push_back(std::move(node)); }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and sweeps the record in reverse, then releases
  // it. Calling again without recording new work is an error.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }

 private:
  friend struct NoGradGuard;
  std::vector<TapeNode> nodes_;
  bool enabled_ = true;
  int depth_ = 0;  // NoGradGuard nesting
};

struct NoGradGuard {
  NoGradGuard() { ++GradTape::get().depth_; }
  ~NoGradGuard() { --GradTape::get().depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline void backward(const Tensor& loss) { GradTape::get().backward(loss); }

// Throws TensorError when any value is NaN/Inf; every forward op calls this
// on its output.
void check_finite(std::span<const float> v, const char* op);

}  // namespace ilnet
