#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehd {

// Dense row-major array of real values. Rank is normally 1 or 2; the encoders
// never need general broadcasting so nothing fancier exists.
template <typename S>
struct Tensor {
  std::vector<size_t> shape;
  std::vector<S> data;

  Tensor() = default;

  Tensor(std::vector<size_t> shape_, std::vector<S> data_)
      : shape(std::move(shape_)), data(std::move(data_)) {
    if (numel_of(shape) != data.size())
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static size_t numel_of(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<size_t> shape) {
    size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<S>(n, S(0)));
  }

  static Tensor full(std::vector<size_t> shape, S v) {
    size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<S>(n, v));
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  size_t numel() const { return data.size(); }
  size_t rank() const { return shape.size(); }

  size_t rows() const {
    if (rank() != 2) throw std::logic_error("Tensor::rows: rank != 2");
    return shape[0];
  }
  size_t cols() const {
    if (rank() != 2) throw std::logic_error("Tensor::cols: rank != 2");
    return shape[1];
  }

  S& at(size_t r, size_t c) { return data[r * shape[1] + c]; }
  const S& at(size_t r, size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

// Named, externally owned parameter. Gradients are accumulated here by
// Graph::backward; frozen parameters never receive any.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;
  bool weight_decay = true;  // false for biases / layer-norm params

  Parameter() = default;
  Parameter(std::string name_, Tensor<S> value_, bool trainable_ = true,
            bool weight_decay_ = true)
      : name(std::move(name_)),
        value(std::move(value_)),
        grad(Tensor<S>::zeros(value.shape)),
        trainable(trainable_),
        weight_decay(weight_decay_) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), S(0)); }
};

}  // namespace ehd
