#include "nmsr/tensor.hpp"

#include <algorithm>
#include <mutex>
#include <sstream>

#include "nmsr/error.hpp"

namespace nmsr {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw InvalidShape("shape entries must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw InvalidShape("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw InvalidShape("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::rank() const { return impl_->shape.size(); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ContractError("item() requires a single-element tensor, shape is " +
                        shape_str(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_mut() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Graph::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  if (!output.requires_grad()) return;
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (backward_done_) {
    throw StateError("backward() already ran on this graph; call reset() first");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  backward_done_ = true;
  Tensor seed = loss;
  if (!seed.requires_grad()) return;
  seed.grad_mut()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

void Graph::reset() {
  nodes_.clear();
  backward_done_ = false;
}

namespace fault_injection {
namespace {
std::mutex g_mutex;
std::string g_op;
}  // namespace

void set(std::string op) {
  std::lock_guard lock(g_mutex);
  g_op = std::move(op);
}

void clear() { set({}); }

bool active(std::string_view op) {
  std::lock_guard lock(g_mutex);
  return !g_op.empty() && g_op == op;
}
}  // namespace fault_injection

}  // namespace nmsr
