#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fineclip/error.hpp"

namespace fineclip {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

// One vertex of the computation graph. Children own their parents, never the reverse.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<double> pending;  // scratch gradient for the backward pass in flight
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& pending_grad() {
    if (pending.empty()) pending.assign(data.size(), 0.0);
    return pending;
  }
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// A Tensor is a cheap shared handle: copies alias the same storage. Values are
/// fixed once an op has produced them; only leaf parameters are mutated, and only
/// through mutable_data() between forward passes.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_string(shape));
    }
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }
  static Tensor row(std::vector<double> data, bool requires_grad = false) {
    const std::size_t n = data.size();
    return Tensor({1, n}, std::move(data), requires_grad);
  }
  static Tensor eye(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access for leaf parameters (optimizer steps, checkpoint loads).
  std::span<double> mutable_data() { return node_->data; }
  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  std::vector<double> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Independent leaf with the same values.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  /// Accumulates d(this)/d(ancestor) into every requires_grad ancestor.
  /// Repeated calls add to existing gradients.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op result; graph edges are kept only if some input needs gradients.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    Node& n = *out.node();
    n.requires_grad = true;
    for (const Tensor* t : inputs) n.parents.push_back(t->node_ptr());
    n.backward = std::move(backward);
  }
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> data,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    Node& n = *out.node();
    n.requires_grad = true;
    for (const Tensor& t : inputs) n.parents.push_back(t.node_ptr());
    n.backward = std::move(backward);
  }
  return out;
}

// Gradient buffer of parent i, or nullptr when that parent is not differentiable.
inline std::vector<double>* parent_grad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  return p.requires_grad ? &p.pending_grad() : nullptr;
}

}  // namespace detail

inline void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) n->pending.clear();
  node_->pending_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->pending.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->pending.empty()) continue;
    if (n->grad.empty()) {
      n->grad = std::move(n->pending);
    } else {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->pending[i];
    }
    std::vector<double>().swap(n->pending);
  }
}

// ---------------------------------------------------------------------------
// .ten serialization: u32 rank, u32 dims, then f64 payload, all little-endian.

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ConfigError("tensor stream truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::size_t ten_byte_size(const Tensor& t) {
  return 4 + 4 * t.rank() + 8 * t.numel();
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::write_le<double>(os, v);
}

inline Tensor read_tensor(std::istream& is) {
  const auto rank = detail::read_le<std::uint32_t>(is);
  if (rank > 8) throw ConfigError("tensor stream: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = detail::read_le<std::uint32_t>(is);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = detail::read_le<double>(is);
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  return read_tensor(is);
}

}  // namespace fineclip
