#pragma once

// Dense row-major tensors and the reverse-mode tape that differentiates them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protograde {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Shared handle to a dense double buffer.
///
/// Copying a Tensor copies the handle, not the data; use clone() for a deep
/// copy. A tensor that requires grad owns a gradient buffer of the same shape,
/// allocated on first access.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  /// Gradient buffer, allocated on first use. Writable through any handle.
  std::span<double> grad() const;
  void zero_grad() const;

  Tensor clone() const;
  /// Same values, no gradient tracking, independent storage.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    mutable std::vector<double> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of primitive applications.
///
/// Entries are appended in execution order, so every operand of an entry was
/// produced by an earlier entry or is a leaf. A non-recording tape runs
/// forward passes without keeping anything.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  /// True when an op over `inputs` must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;
  bool tracks(std::span<const Tensor> inputs) const;

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

  /// Reverse sweep seeded with d(loss)/d(loss) = 1. Rejects non-scalar losses.
  void backward(const Tensor& loss);
  /// Reverse sweep seeded with an arbitrary upstream gradient for `output`.
  void backward(const Tensor& output, std::span<const double> seed);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  void sweep();

  bool recording_;
  std::vector<Entry> entries_;
};

/// A named trainable tensor. Frozen parameters never receive updates.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// Ordered collection of parameters; iteration order is registration order.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value, bool frozen = false);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad() const;
  /// Deep copy of every tensor.
  ParameterSet clone() const;

 private:
  std::vector<Parameter> items_;
};

/// p <- p - lr * grad(p) for every non-frozen parameter.
void sgd_step(ParameterSet& params, double learning_rate);

class Rng;

/// Glorot-uniform fill: U[-a, a] with a = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace protograde
