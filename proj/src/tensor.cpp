#include "protograde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "protograde/errors.hpp"
#include "protograde/random.hpp"

namespace protograde {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  auto impl = std::make_shared<Impl>();
  impl->data.assign(shape_size(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  if (shape_size(shape) != values.size())
    throw ShapeError("shape " + shape_to_string(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(impl_->shape));
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

std::span<double> Tensor::grad() const {
  if (!impl_->requires_grad) throw std::logic_error("grad() on a tensor that does not require grad");
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<Impl>(*impl_);
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool Tape::tracks(std::span<const Tensor> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
  if (seed.size() != output.size())
    throw ShapeError("backward seed has " + std::to_string(seed.size()) + " values for output of shape " +
                     shape_to_string(output.shape()));
  if (!output.requires_grad()) return;
  Tensor out = output;
  auto g = out.grad();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  sweep();
}

void Tape::sweep() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  entries_.clear();
}

Tensor ParameterSet::add(std::string name, Tensor value, bool frozen) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(!frozen);
  items_.push_back({std::move(name), value, frozen});
  return value;
}

Parameter& ParameterSet::at(const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& ParameterSet::at(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() const {
  for (auto& p : items_) p.value.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : items_) out.items_.push_back({p.name, p.value.clone(), p.frozen});
  return out;
}

void sgd_step(ParameterSet& params, double learning_rate) {
  for (auto& p : params.items()) {
    if (p.frozen || !p.value.requires_grad()) continue;
    auto v = p.value.data();
    auto g = p.value.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
  }
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
}

}  // namespace protograde
