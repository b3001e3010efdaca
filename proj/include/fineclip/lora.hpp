#pragma once

#include <cmath>
#include <cstdint>

#include "fineclip/ops.hpp"
#include "fineclip/rng.hpp"

namespace fineclip {

/// Trainable low-rank update αBA for a frozen d_out×d_in weight.
struct LoRAAdapter {
  Tensor A;  // r × d_in
  Tensor B;  // d_out × r
  double alpha = 1.0;

  LoRAAdapter() = default;
  LoRAAdapter(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha_, std::uint64_t seed)
      : A(Tensor::zeros({rank, d_in}, true)), B(Tensor::zeros({d_out, rank}, true)), alpha(alpha_) {
    init(seed);
  }

  std::size_t rank() const { return A.rows(); }
  std::size_t d_in() const { return A.cols(); }
  std::size_t d_out() const { return B.rows(); }
  std::size_t parameter_count() const { return A.numel() + B.numel(); }

  /// A ~ N(0, 1/d_in), B = 0, so the adapted layer starts as the frozen one.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d_in())));
    for (auto& v : A.mutable_data()) v = dist(rng);
    for (auto& v : B.mutable_data()) v = 0.0;
  }
};

/// Rows of x (R×d_in) mapped through W + αBA, computed as xWᵀ + α(xAᵀ)Bᵀ.
inline Tensor lora_forward(const Tensor& x, const Tensor& W, const LoRAAdapter& adapter) {
  if (W.rows() != adapter.d_out() || W.cols() != adapter.d_in()) {
    throw ShapeError("lora_forward: weight " + shape_string(W.shape()) + " vs adapter A " +
                     shape_string(adapter.A.shape()) + ", B " + shape_string(adapter.B.shape()));
  }
  const Tensor base = matmul_nt(x, W);
  const Tensor update = scale(matmul_nt(matmul_nt(x, adapter.A), adapter.B), adapter.alpha);
  return add(base, update);
}

/// W + αBA as a plain (non-differentiable) tensor.
inline Tensor merge(const LoRAAdapter& adapter, const Tensor& W) {
  if (W.rows() != adapter.d_out() || W.cols() != adapter.d_in()) {
    throw ShapeError("merge: weight " + shape_string(W.shape()) + " vs adapter A " +
                     shape_string(adapter.A.shape()));
  }
  const std::size_t r = adapter.rank(), din = adapter.d_in(), dout = adapter.d_out();
  std::vector<double> out(W.data().begin(), W.data().end());
  detail::mmap(out, dout, din).noalias() +=
      adapter.alpha * (detail::cmap(adapter.B.node()->data, dout, r) * detail::cmap(adapter.A.node()->data, r, din));
  return Tensor({dout, din}, std::move(out));
}

}  // namespace fineclip
