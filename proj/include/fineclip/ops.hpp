#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fineclip/tensor.hpp"

namespace fineclip {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline ConstMap cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MutMap mmap(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), {&x}, [df](Node& n) {
    auto* g = parent_grad(n, 0);
    const auto& xin = n.parents[0]->data;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i] * df(xin[i], n.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = detail::parent_grad(n, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same("subtract", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& n) {
    if (auto* g = detail::parent_grad(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i];
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.pending[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same("multiply", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    const auto& bv = n.parents[1]->data;
    if (auto* g = detail::parent_grad(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i] * bv[i];
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i] * av[i];
    }
  });
}

/// X (R×C) + r (1×C), r broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& r) {
  detail::require_matrix("add_row", x);
  if (r.numel() != x.cols()) detail::mismatch("add_row", x, r);
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] = x.data()[i * C + j] + r.data()[j];
  return detail::make_result(x.shape(), std::move(out), {&x, &r}, [R, C](detail::Node& n) {
    if (auto* g = detail::parent_grad(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i];
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) (*g)[j] += n.pending[i * C + j];
    }
  });
}

/// X (R×C) ⊙ r (1×C), r broadcast over rows.
inline Tensor mul_row(const Tensor& x, const Tensor& r) {
  detail::require_matrix("mul_row", x);
  if (r.numel() != x.cols()) detail::mismatch("mul_row", x, r);
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] = x.data()[i * C + j] * r.data()[j];
  return detail::make_result(x.shape(), std::move(out), {&x, &r}, [R, C](detail::Node& n) {
    const auto& xv = n.parents[0]->data;
    const auto& rv = n.parents[1]->data;
    if (auto* g = detail::parent_grad(n, 0)) {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) (*g)[i * C + j] += n.pending[i * C + j] * rv[j];
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) (*g)[j] += n.pending[i * C + j] * xv[i * C + j];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

/// X scaled by a one-element tensor (differentiable in both).
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) detail::mismatch("scale_by", x, s);
  const double sv = s.data()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * sv;
  return detail::make_result(x.shape(), std::move(out), {&x, &s}, [](detail::Node& n) {
    const auto& xv = n.parents[0]->data;
    const double sv = n.parents[1]->data[0];
    if (auto* g = detail::parent_grad(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i] * sv;
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += n.pending[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x.data()[i] > 0.0)) {
      throw DomainError("log: non-positive value " + std::to_string(x.data()[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; },
                       [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  return detail::unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

inline Tensor elu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0 ? v : std::expm1(v); },
                       [](double v, double y) { return v > 0 ? 1.0 : y + 1.0; });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

// tanh approximation
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + c * v * v * v);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::make_result({}, {acc}, {&x}, [](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (double& v : *g) v += n.pending[0];
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Matrix products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows()) detail::mismatch("matmul", a, b);
  const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
  std::vector<double> out(M * N);
  detail::mmap(out, M, N).noalias() =
      detail::cmap(a.node()->data, M, K) * detail::cmap(b.node()->data, K, N);
  return detail::make_result({M, N}, std::move(out), {&a, &b}, [M, K, N](detail::Node& n) {
    const auto G = detail::cmap(n.pending, M, N);
    if (auto* g = detail::parent_grad(n, 0)) {
      detail::mmap(*g, M, K).noalias() += G * detail::cmap(n.parents[1]->data, K, N).transpose();
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      detail::mmap(*g, K, N).noalias() += detail::cmap(n.parents[0]->data, M, K).transpose() * G;
    }
  });
}

/// A·Bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) detail::mismatch("matmul_nt", a, b);
  const std::size_t M = a.rows(), K = a.cols(), N = b.rows();
  std::vector<double> out(M * N);
  detail::mmap(out, M, N).noalias() =
      detail::cmap(a.node()->data, M, K) * detail::cmap(b.node()->data, N, K).transpose();
  return detail::make_result({M, N}, std::move(out), {&a, &b}, [M, K, N](detail::Node& n) {
    const auto G = detail::cmap(n.pending, M, N);
    if (auto* g = detail::parent_grad(n, 0)) {
      detail::mmap(*g, M, K).noalias() += G * detail::cmap(n.parents[1]->data, N, K);
    }
    if (auto* g = detail::parent_grad(n, 1)) {
      detail::mmap(*g, N, K).noalias() += G.transpose() * detail::cmap(n.parents[0]->data, M, K);
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix("transpose", x);
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(R * C);
  detail::mmap(out, C, R) = detail::cmap(x.node()->data, R, C).transpose();
  return detail::make_result({C, R}, std::move(out), {&x}, [R, C](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    detail::mmap(*g, R, C) += detail::cmap(n.pending, C, R).transpose();
  });
}

// ---------------------------------------------------------------------------
// Structural

/// Concatenation along the last axis.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concatenate: no operands");
  for (const auto& p : parts) detail::require_matrix("concatenate", p);
  const std::size_t R = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.rows() != R) detail::mismatch("concatenate", parts[0], p);
    widths.push_back(p.cols());
    C += p.cols();
  }
  std::vector<double> out(R * C);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < R; ++i)
      std::copy_n(p.data().begin() + i * w, w, out.begin() + i * C + off);
    off += w;
  }
  return detail::make_result({R, C}, std::move(out), parts, [R, C, widths](detail::Node& n) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t w = widths[p];
      if (auto* g = detail::parent_grad(n, p)) {
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < w; ++j) (*g)[i * w + j] += n.pending[i * C + off + j];
      }
      off += w;
    }
  });
}

/// Concatenation along the first axis.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  for (const auto& p : parts) detail::require_matrix("concat_rows", p);
  const std::size_t C = parts[0].cols();
  std::size_t R = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.cols() != C) detail::mismatch("concat_rows", parts[0], p);
    R += p.rows();
    sizes.push_back(p.numel());
  }
  std::vector<double> out;
  out.reserve(R * C);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result({R, C}, std::move(out), parts, [sizes](detail::Node& n) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      if (auto* g = detail::parent_grad(n, p)) {
        for (std::size_t i = 0; i < sizes[p]; ++i) (*g)[i] += n.pending[off + i];
      }
      off += sizes[p];
    }
  });
}

/// Sub-block rows [r0, r1) × columns [c0, c1).
inline Tensor slice(const Tensor& x, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  detail::require_matrix("slice", x);
  if (r0 >= r1 || c0 >= c1 || r1 > x.rows() || c1 > x.cols()) {
    throw ShapeError("slice: range [" + std::to_string(r0) + "," + std::to_string(r1) + ")x[" +
                     std::to_string(c0) + "," + std::to_string(c1) + ") outside " +
                     shape_string(x.shape()));
  }
  const std::size_t C = x.cols(), R = r1 - r0, W = c1 - c0;
  std::vector<double> out(R * W);
  for (std::size_t i = 0; i < R; ++i)
    std::copy_n(x.data().begin() + (r0 + i) * C + c0, W, out.begin() + i * W);
  return detail::make_result({R, W}, std::move(out), {&x}, [r0, c0, C, R, W](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < W; ++j) (*g)[(r0 + i) * C + c0 + j] += n.pending[i * W + j];
  });
}

/// Rows of x in the given order; indices may repeat.
inline Tensor take_rows(const Tensor& x, std::vector<std::size_t> indices) {
  detail::require_matrix("take_rows", x);
  if (indices.empty()) throw ShapeError("take_rows: empty index list");
  const std::size_t C = x.cols();
  for (std::size_t r : indices) {
    if (r >= x.rows()) throw ShapeError("take_rows: row " + std::to_string(r) + " outside " + shape_string(x.shape()));
  }
  std::vector<double> out(indices.size() * C);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(x.data().begin() + indices[i] * C, C, out.begin() + i * C);
  const std::size_t R = indices.size();
  return detail::make_result({R, C}, std::move(out), {&x},
                             [idx = std::move(indices), C](detail::Node& n) {
                               auto* g = detail::parent_grad(n, 0);
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t j = 0; j < C; ++j)
                                   (*g)[idx[i] * C + j] += n.pending[i * C + j];
                             });
}

/// Flat-index gather into a 1×n row.
inline Tensor gather(const Tensor& x, std::vector<std::size_t> flat) {
  if (flat.empty()) throw ShapeError("gather: empty index list");
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= x.numel()) throw ShapeError("gather: index outside " + shape_string(x.shape()));
    out[i] = x.data()[flat[i]];
  }
  const std::size_t n_out = flat.size();
  return detail::make_result({1, n_out}, std::move(out), {&x}, [idx = std::move(flat)](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) (*g)[idx[i]] += n.pending[i];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return detail::make_result(std::move(shape), x.to_vector(), {&x}, [](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.pending[i];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

/// Softmax over the last axis, with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix("softmax", x);
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < R; ++i) {
    const double* in = x.data().data() + i * C;
    double* o = out.data() + i * C;
    const double mx = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < C; ++j) o[j] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [R, C](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (std::size_t i = 0; i < R; ++i) {
      const double* y = n.data.data() + i * C;
      const double* gy = n.pending.data() + i * C;
      double dot = 0.0;
      for (std::size_t j = 0; j < C; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < C; ++j) (*g)[i * C + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// Each row divided by its L2 norm; zero rows map to zero rows.
inline Tensor l2_normalize_rows(const Tensor& x) {
  detail::require_matrix("l2_normalize", x);
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(x.numel(), 0.0);
  std::vector<double> norms(R, 0.0);
  for (std::size_t i = 0; i < R; ++i) {
    const double* in = x.data().data() + i * C;
    double ss = 0.0;
    for (std::size_t j = 0; j < C; ++j) ss += in[j] * in[j];
    norms[i] = std::sqrt(ss);
    if (norms[i] > 0.0) {
      for (std::size_t j = 0; j < C; ++j) out[i * C + j] = in[j] / norms[i];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {&x}, [R, C, norms](detail::Node& n) {
    auto* g = detail::parent_grad(n, 0);
    for (std::size_t i = 0; i < R; ++i) {
      if (norms[i] == 0.0) continue;
      const double* y = n.data.data() + i * C;
      const double* gy = n.pending.data() + i * C;
      double dot = 0.0;
      for (std::size_t j = 0; j < C; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < C; ++j) (*g)[i * C + j] += (gy[j] - y[j] * dot) / norms[i];
    }
  });
}

/// Cosine similarity of row i of a with row i of b, as an R×1 column.
inline Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b) {
  detail::require_same("cosine_similarity", a, b);
  detail::require_matrix("cosine_similarity", a);
  Tensor prod = mul(l2_normalize_rows(a), l2_normalize_rows(b));
  // row sums via a ones column
  return matmul(prod, Tensor::full({a.cols(), 1}, 1.0));
}

/// Layer normalization over the last axis with affine gamma/beta (1×C each).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_matrix("layer_norm", x);
  const std::size_t R = x.rows(), C = x.cols();
  if (gamma.numel() != C) detail::mismatch("layer_norm", x, gamma);
  if (beta.numel() != C) detail::mismatch("layer_norm", x, beta);
  std::vector<double> xhat(x.numel()), out(x.numel()), inv_std(R);
  for (std::size_t i = 0; i < R; ++i) {
    const double* in = x.data().data() + i * C;
    double mu = 0.0;
    for (std::size_t j = 0; j < C; ++j) mu += in[j];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(C);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) {
      xhat[i * C + j] = (in[j] - mu) * inv_std[i];
      out[i * C + j] = xhat[i * C + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [R, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& n) {
        const auto& gm = n.parents[1]->data;
        if (auto* g = detail::parent_grad(n, 0)) {
          for (std::size_t i = 0; i < R; ++i) {
            const double* gy = n.pending.data() + i * C;
            const double* xh = xhat.data() + i * C;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
              const double d = gy[j] * gm[j];
              s1 += d;
              s2 += d * xh[j];
            }
            const double invC = 1.0 / static_cast<double>(C);
            for (std::size_t j = 0; j < C; ++j) {
              const double d = gy[j] * gm[j];
              (*g)[i * C + j] += inv_std[i] * (d - invC * s1 - xh[j] * invC * s2);
            }
          }
        }
        if (auto* g = detail::parent_grad(n, 1)) {
          for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) (*g)[j] += n.pending[i * C + j] * xhat[i * C + j];
        }
        if (auto* g = detail::parent_grad(n, 2)) {
          for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) (*g)[j] += n.pending[i * C + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Fused multi-head scaled dot-product attention.
//
// q, k, v are (S·T)×D: S independent sequences of length T stacked by rows.
// Each of the `heads` column groups attends only within its own sequence.

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t sequences,
                        std::size_t heads, bool causal) {
  detail::require_same("attention", q, k);
  detail::require_same("attention", q, v);
  detail::require_matrix("attention", q);
  const std::size_t rows = q.rows(), D = q.cols();
  if (sequences == 0 || rows % sequences != 0 || heads == 0 || D % heads != 0) {
    throw ShapeError("attention: " + shape_string(q.shape()) + " not divisible into " +
                     std::to_string(sequences) + " sequences x " + std::to_string(heads) + " heads");
  }
  const std::size_t T = rows / sequences, dh = D / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& Q = q.node()->data;
  const auto& K = k.node()->data;
  const auto& V = v.node()->data;
  std::vector<double> out(rows * D, 0.0);
  std::vector<double> probs(sequences * heads * T * T, 0.0);

  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const detail::RowMatrix, 0, Stride>;
  using MutBlock = Eigen::Map<detail::RowMatrix, 0, Stride>;
  const auto Ti = static_cast<Eigen::Index>(T), dhi = static_cast<Eigen::Index>(dh);
  const Stride stride(static_cast<Eigen::Index>(D));

  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = s * T * D + h * dh;
      Block Qb(Q.data() + base, Ti, dhi, stride), Kb(K.data() + base, Ti, dhi, stride),
          Vb(V.data() + base, Ti, dhi, stride);
      double* P = probs.data() + (s * heads + h) * T * T;
      detail::MutMap Pm(P, Ti, Ti);
      Pm.noalias() = Qb * Kb.transpose();
      for (std::size_t i = 0; i < T; ++i) {
        double* row = P + i * T;
        const std::size_t lim = causal ? i + 1 : T;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, row[j] * inv);
        double z = 0.0;
        for (std::size_t j = 0; j < lim; ++j) z += (row[j] = std::exp(row[j] * inv - mx));
        for (std::size_t j = 0; j < lim; ++j) row[j] /= z;
        for (std::size_t j = lim; j < T; ++j) row[j] = 0.0;
      }
      MutBlock Ob(out.data() + base, Ti, dhi, stride);
      Ob.noalias() = Pm * Vb;
    }
  }

  return detail::make_result(
      q.shape(), std::move(out), {&q, &k, &v},
      [sequences, heads, T, D, dh, inv, probs = std::move(probs)](detail::Node& n) {
        const auto Ti = static_cast<Eigen::Index>(T), dhi = static_cast<Eigen::Index>(dh);
        const Stride stride(static_cast<Eigen::Index>(D));
        const auto& Q = n.parents[0]->data;
        const auto& K = n.parents[1]->data;
        const auto& V = n.parents[2]->data;
        auto* gq = detail::parent_grad(n, 0);
        auto* gk = detail::parent_grad(n, 1);
        auto* gv = detail::parent_grad(n, 2);
        detail::RowMatrix dP(Ti, Ti);
        for (std::size_t s = 0; s < sequences; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = s * T * D + h * dh;
            Block Qb(Q.data() + base, Ti, dhi, stride), Kb(K.data() + base, Ti, dhi, stride),
                Vb(V.data() + base, Ti, dhi, stride), dO(n.pending.data() + base, Ti, dhi, stride);
            detail::ConstMap P(probs.data() + (s * heads + h) * T * T, Ti, Ti);
            if (gv) {
              MutBlock dV(gv->data() + base, Ti, dhi, stride);
              dV.noalias() += P.transpose() * dO;
            }
            if (!gq && !gk) continue;
            dP.noalias() = dO * Vb.transpose();
            // dScores = P ⊙ (dP − rowsum(dP ⊙ P)), then scaled by 1/sqrt(dh).
            for (Eigen::Index i = 0; i < Ti; ++i) {
              const double dot = (dP.row(i).array() * P.row(i).array()).sum();
              dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot) * inv).matrix();
            }
            if (gq) {
              MutBlock dQ(gq->data() + base, Ti, dhi, stride);
              dQ.noalias() += dP * Kb;
            }
            if (gk) {
              MutBlock dK(gk->data() + base, Ti, dhi, stride);
              dK.noalias() += dP.transpose() * Qb;
            }
          }
        }
      });
}

}  // namespace fineclip
