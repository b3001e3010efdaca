#pragma once

#include <cmath>

#include "fineclip/ops.hpp"

namespace fineclip {

/// Per-level logits from the global and object-aware image features, and their average.
struct LogitBundle {
  Tensor y0, y1;        // B × C_i from v
  Tensor y0_oc, y1_oc;  // B × C_i from v_oc
  Tensor fused0, fused1;
  double tau = 0.0;
};

/// τ · normalize(v) · normalize(z)ᵀ.
inline Tensor image_logits(const Tensor& v, const Tensor& z, const Tensor& tau) {
  return scale_by(matmul_nt(l2_normalize_rows(v), l2_normalize_rows(z)), tau);
}

inline Tensor image_logits(const Tensor& v, const Tensor& z, double tau) {
  return scale(matmul_nt(l2_normalize_rows(v), l2_normalize_rows(z)), tau);
}

struct ObjectAttention {
  Tensor alpha;  // 1 × k
  Tensor v_oc;   // 1 × d
};

/// alpha = softmax(v·f_ocᵀ / √d), v_oc = alpha · f_oc, for a single image.
inline ObjectAttention object_attention(const Tensor& v, const Tensor& f_oc) {
  if (v.rows() != 1 || v.cols() != f_oc.cols()) detail::mismatch("object_attention", v, f_oc);
  const double inv = 1.0 / std::sqrt(static_cast<double>(v.cols()));
  const Tensor alpha = softmax_rows(scale(matmul_nt(v, f_oc), inv));
  return {alpha, matmul(alpha, f_oc)};
}

/// Elementwise midpoint (y + y_oc) / 2.
inline Tensor fuse(const Tensor& y, const Tensor& y_oc) { return scale(add(y, y_oc), 0.5); }

}  // namespace fineclip
