#pragma once

// Dense 64-bit tensors with reverse-mode gradient recording.
//
// A Tape owns the op records for one forward pass; ops are Tape methods so
// every intermediate is registered in execution order and backward() is a
// single reverse sweep. Tensors are immutable value handles (id + shape +
// shared buffer); a tape is confined to one worker at a time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bacite/rng.hpp"

namespace bacite {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error("ShapeMismatch: " + what) {}
};
struct NonFiniteValue : std::runtime_error {
  explicit NonFiniteValue(const std::string& op) : std::runtime_error("NonFiniteValue in op: " + op) {}
};
struct NonScalarLoss : std::runtime_error {
  NonScalarLoss() : std::runtime_error("backward requires a scalar loss") {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool requires_grad() const { return requires_grad_; }
  std::size_t id() const { return id_; }
  bool valid() const { return values_ != nullptr; }

  const std::vector<double>& values() const { return *values_; }

  double scalar() const {
    if (size() != 1) throw ShapeMismatch("scalar() on tensor of size " + std::to_string(size()));
    return (*values_)[0];
  }

 private:
  friend class Tape;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  bool requires_grad_ = false;
};

// Gradients keyed by tensor id, produced by Tape::backward.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : by_id_(n) {}

  bool has(const Tensor& t) const {
    return t.id() < by_id_.size() && !by_id_[t.id()].empty();
  }
  const std::vector<double>& at(const Tensor& t) const {
    if (!has(t)) throw std::out_of_range("no gradient recorded for tensor");
    return by_id_[t.id()];
  }
  std::vector<double>& slot(std::size_t id, std::size_t n) {
    if (by_id_[id].empty()) by_id_[id].assign(n, 0.0);
    return by_id_[id];
  }

 private:
  std::vector<std::vector<double>> by_id_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MapMatMut = Eigen::Map<RowMat>;

inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }
inline double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.39894228040143267794;  // standard normal pdf
  return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)) + x * phi;
}
inline double softplus_fwd(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t num_nodes() const { return next_id_; }
  std::size_t num_records() const { return records_.size(); }

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw ShapeMismatch("leaf: shape/value count disagree");
    return make(std::move(shape), std::move(values), requires_grad, "leaf");
  }

  Tensor constant(Shape shape, std::vector<double> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  Tensor scalar(double v, bool requires_grad = false) {
    return leaf({1}, {v}, requires_grad);
  }

  Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_size(shape), 0.0);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  // ---- forward ops -------------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k) throw ShapeMismatch("matmul: inner dims " + std::to_string(k) + " vs " + std::to_string(b.dim(0)));
    std::vector<double> out(n * m, 0.0);
    if (n && k && m) {
      detail::MapMat A(a.values().data(), n, k), B(b.values().data(), k, m);
      detail::MapMatMut C(out.data(), n, m);
      C.noalias() = A * B;
    }
    Tensor y = make({n, m}, std::move(out), a.requires_grad() || b.requires_grad(), "matmul");
    if (y.requires_grad()) {
      record([a, b, y](Gradients& g) {
        const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
        if (!n || !k || !m) return;
        detail::MapMat A(a.values().data(), n, k), B(b.values().data(), k, m),
            dY(g.at(y).data(), n, m);
        if (a.requires_grad()) {
          detail::MapMatMut dA(g.slot(a.id(), n * k).data(), n, k);
          dA.noalias() += dY * B.transpose();
        }
        if (b.requires_grad()) {
          detail::MapMatMut dB(g.slot(b.id(), k * m).data(), k, m);
          dB.noalias() += A.transpose() * dY;
        }
      }, y);
    }
    return y;
  }

  // add: identical shapes, or [n,m] + [m] / [n,m] + [1,m] row broadcast, or x + [1] scalar broadcast
  Tensor add(const Tensor& a, const Tensor& b) { return add_sub(a, b, +1.0); }
  Tensor sub(const Tensor& a, const Tensor& b) { return add_sub(a, b, -1.0); }

  // elementwise product; same shapes or x * [1] scalar broadcast
  Tensor mul(const Tensor& a, const Tensor& b) {
    const bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!b_scalar && a.shape() != b.shape()) throw ShapeMismatch("mul: shapes differ");
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * (b_scalar ? bv[0] : bv[i]);
    Tensor y = make(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "mul");
    if (y.requires_grad()) {
      record([a, b, y, b_scalar](Gradients& g) {
        const auto& dy = g.at(y);
        if (a.requires_grad()) {
          auto& da = g.slot(a.id(), a.size());
          for (std::size_t i = 0; i < dy.size(); ++i)
            da[i] += dy[i] * (b_scalar ? b.values()[0] : b.values()[i]);
        }
        if (b.requires_grad()) {
          auto& db = g.slot(b.id(), b.size());
          for (std::size_t i = 0; i < dy.size(); ++i) {
            if (b_scalar) db[0] += dy[i] * a.values()[i];
            else db[i] += dy[i] * a.values()[i];
          }
        }
      }, y);
    }
    return y;
  }

  Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    Tensor y = make(a.shape(), std::move(out), a.requires_grad(), "scale");
    if (y.requires_grad()) {
      record([a, y, c](Gradients& g) {
        const auto& dy = g.at(y);
        auto& da = g.slot(a.id(), a.size());
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
      }, y);
    }
    return y;
  }

  // multiply row i of x [n,m] by s[i]; s is rank 1 of length n
  Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_rank(x, 2, "scale_rows x");
    require_rank(s, 1, "scale_rows s");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (s.dim(0) != n) throw ShapeMismatch("scale_rows: row count mismatch");
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.values()[i * m + j] * s.values()[i];
    Tensor y = make({n, m}, std::move(out), x.requires_grad() || s.requires_grad(), "scale_rows");
    if (y.requires_grad()) {
      record([x, s, y](Gradients& g) {
        const std::size_t n = x.dim(0), m = x.dim(1);
        const auto& dy = g.at(y);
        if (x.requires_grad()) {
          auto& dx = g.slot(x.id(), n * m);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[i * m + j] * s.values()[i];
        }
        if (s.requires_grad()) {
          auto& ds = g.slot(s.id(), n);
          for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += dy[i * m + j] * x.values()[i * m + j];
            ds[i] += acc;
          }
        }
      }, y);
    }
    return y;
  }

  // axis 0: stack rows (ranks must match); axis 1: side-by-side columns of 2-D tensors
  Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat: no parts");
    if (axis != 0 && axis != 1) throw ShapeMismatch("concat: axis must be 0 or 1");
    bool rg = false;
    for (const auto& p : parts) rg = rg || p.requires_grad();
    Shape out_shape;
    std::vector<double> out;
    if (axis == 0) {
      const Shape& first = parts[0].shape();
      std::size_t rows = 0;
      for (const auto& p : parts) {
        if (p.rank() != parts[0].rank()) throw ShapeMismatch("concat: rank mismatch");
        if (p.rank() == 2 && p.dim(1) != parts[0].dim(1)) throw ShapeMismatch("concat: column mismatch");
        rows += p.dim(0);
      }
      out_shape = first.size() == 2 ? Shape{rows, first[1]} : Shape{rows};
      out.reserve(shape_size(out_shape));
      for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    } else {
      const std::size_t n = parts[0].dim(0);
      std::size_t cols = 0;
      for (const auto& p : parts) {
        require_rank(p, 2, "concat axis=1 part");
        if (p.dim(0) != n) throw ShapeMismatch("concat: row mismatch");
        cols += p.dim(1);
      }
      out_shape = {n, cols};
      out.resize(n * cols);
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t m = p.dim(1);
        for (std::size_t i = 0; i < n; ++i)
          std::copy_n(p.values().data() + i * m, m, out.data() + i * cols + off);
        off += m;
      }
    }
    Tensor y = make(std::move(out_shape), std::move(out), rg, "concat");
    if (rg) {
      record([parts, y, axis](Gradients& g) {
        const auto& dy = g.at(y);
        if (axis == 0) {
          std::size_t off = 0;
          for (const auto& p : parts) {
            if (p.requires_grad()) {
              auto& dp = g.slot(p.id(), p.size());
              for (std::size_t i = 0; i < p.size(); ++i) dp[i] += dy[off + i];
            }
            off += p.size();
          }
        } else {
          const std::size_t n = parts[0].dim(0);
          std::size_t cols = y.dim(1), off = 0;
          for (const auto& p : parts) {
            const std::size_t m = p.dim(1);
            if (p.requires_grad()) {
              auto& dp = g.slot(p.id(), p.size());
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) dp[i * m + j] += dy[i * cols + off + j];
            }
            off += m;
          }
        }
      }, y);
    }
    return y;
  }

  Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    require_rank(x, 2, "slice_cols");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (start + len > m) throw ShapeMismatch("slice_cols: out of range");
    std::vector<double> out(n * len);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.values().data() + i * m + start, len, out.data() + i * len);
    Tensor y = make({n, len}, std::move(out), x.requires_grad(), "slice_cols");
    if (y.requires_grad()) {
      record([x, y, start, len](Gradients& g) {
        const std::size_t n = x.dim(0), m = x.dim(1);
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), n * m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < len; ++j) dx[i * m + start + j] += dy[i * len + j];
      }, y);
    }
    return y;
  }

  // gather rows of x by index (aka embedding_select)
  Tensor rows_select(const Tensor& x, const std::vector<std::size_t>& idx) {
    require_rank(x, 2, "rows_select");
    const std::size_t n = x.dim(0), m = x.dim(1);
    for (std::size_t i : idx)
      if (i >= n) throw ShapeMismatch("rows_select: index out of range");
    std::vector<double> out(idx.size() * m);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(x.values().data() + idx[r] * m, m, out.data() + r * m);
    Tensor y = make({idx.size(), m}, std::move(out), x.requires_grad(), "rows_select");
    if (y.requires_grad()) {
      record([x, y, idx](Gradients& g) {
        const std::size_t m = x.dim(1);
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < m; ++j) dx[idx[r] * m + j] += dy[r * m + j];
      }, y);
    }
    return y;
  }

  Tensor embedding_select(const Tensor& table, const std::vector<std::size_t>& idx) {
    return rows_select(table, idx);
  }

  Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) throw ShapeMismatch("reshape: size mismatch");
    Tensor y = make(std::move(shape), std::vector<double>(x.values()), x.requires_grad(), "reshape");
    if (y.requires_grad()) {
      record([x, y](Gradients& g) {
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }, y);
    }
    return y;
  }

  Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
  }

  // max(0, x); same math as relu, kept as its own op for loss readability
  Tensor hinge(const Tensor& x) {
    return unary(x, "hinge", [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
  }

  Tensor gelu(const Tensor& x) {
    return unary(x, "gelu", detail::gelu_fwd,
                 [](double v, double) { return detail::gelu_grad(v); });
  }

  Tensor softplus(const Tensor& x) {
    return unary(x, "softplus", detail::softplus_fwd,
                 [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
  }

  Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); },
                 [](double, double y) { return y; });
  }

  Tensor log1p(const Tensor& x) {
    return unary(x, "log1p", [](double v) { return std::log1p(v); },
                 [](double v, double) { return 1.0 / (1.0 + v); });
  }

  Tensor square(const Tensor& x) {
    return unary(x, "square", [](double v) { return v * v; },
                 [](double v, double) { return 2.0 * v; });
  }

  Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ShapeMismatch("clamp: lo > hi");
    return unary(x, "clamp",
                 [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                 [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
  }

  // numerically stable softmax along the last axis (rows of a 2-D tensor, or a 1-D vector)
  Tensor softmax(const Tensor& x) {
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    const std::size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    if (cols == 0) throw ShapeMismatch("softmax: empty axis");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
      const double* v = x.values().data() + i * cols;
      double mx = v[0];
      for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, v[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) z += std::exp(v[j] - mx);
      for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = std::exp(v[j] - mx) / z;
    }
    Tensor y = make(x.shape(), std::move(out), x.requires_grad(), "softmax");
    if (y.requires_grad()) {
      record([x, y, rows, cols](Gradients& g) {
        const auto& dy = g.at(y);
        const auto& s = y.values();
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < rows; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += dy[i * cols + j] * s[i * cols + j];
          for (std::size_t j = 0; j < cols; ++j)
            dx[i * cols + j] += s[i * cols + j] * (dy[i * cols + j] - dot);
        }
      }, y);
    }
    return y;
  }

  // rowwise layer norm with learned gamma/beta of length m; eps 1e-5
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank(x, 2, "layer_norm x");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (gamma.size() != m || beta.size() != m) throw ShapeMismatch("layer_norm: param width");
    constexpr double kEps = 1e-5;
    std::vector<double> out(n * m), xhat(n * m), inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* v = x.values().data() + i * m;
      double mean = 0.0;
      for (std::size_t j = 0; j < m; ++j) mean += v[j];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t j = 0; j < m; ++j) var += (v[j] - mean) * (v[j] - mean);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[i] = is;
      for (std::size_t j = 0; j < m; ++j) {
        xhat[i * m + j] = (v[j] - mean) * is;
        out[i * m + j] = xhat[i * m + j] * gamma.values()[j] + beta.values()[j];
      }
    }
    const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor y = make({n, m}, std::move(out), rg, "layer_norm");
    if (rg) {
      auto xhat_p = std::make_shared<std::vector<double>>(std::move(xhat));
      auto istd_p = std::make_shared<std::vector<double>>(std::move(inv_std));
      record([x, gamma, beta, y, xhat_p, istd_p](Gradients& g) {
        const std::size_t n = x.dim(0), m = x.dim(1);
        const auto& dy = g.at(y);
        const auto& xh = *xhat_p;
        if (gamma.requires_grad()) {
          auto& dg = g.slot(gamma.id(), m);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) dg[j] += dy[i * m + j] * xh[i * m + j];
        }
        if (beta.requires_grad()) {
          auto& db = g.slot(beta.id(), m);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
        }
        if (x.requires_grad()) {
          auto& dx = g.slot(x.id(), n * m);
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < n; ++i) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              const double dxhat = dy[i * m + j] * gamma.values()[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xh[i * m + j];
            }
            for (std::size_t j = 0; j < m; ++j) {
              const double dxhat = dy[i * m + j] * gamma.values()[j];
              dx[i * m + j] += (*istd_p)[i] *
                  (dxhat - inv_m * sum_dxhat - xh[i * m + j] * inv_m * sum_dxhat_xhat);
            }
          }
        }
      }, y);
    }
    return y;
  }

  // Inverted dropout: train mode zeroes a seeded mask and scales survivors
  // by 1/(1-p); eval mode is the identity.
  Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw ShapeMismatch("dropout: p must be in [0,1)");
    if (!train || p == 0.0) return x;
    const double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*mask)[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
      out[i] = x.values()[i] * (*mask)[i];
    }
    Tensor y = make(x.shape(), std::move(out), x.requires_grad(), "dropout");
    if (y.requires_grad()) {
      record([x, y, mask](Gradients& g) {
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
      }, y);
    }
    return y;
  }

  Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor y = make({1}, {acc}, x.requires_grad(), "sum");
    if (y.requires_grad()) {
      record([x, y](Gradients& g) {
        const double dy = g.at(y)[0];
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
      }, y);
    }
    return y;
  }

  Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeMismatch("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
  }

  // row sums of a 2-D tensor -> rank 1
  Tensor row_sum(const Tensor& x) {
    require_rank(x, 2, "row_sum");
    const std::size_t n = x.dim(0), m = x.dim(1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i] += x.values()[i * m + j];
    Tensor y = make({n}, std::move(out), x.requires_grad(), "row_sum");
    if (y.requires_grad()) {
      record([x, y](Gradients& g) {
        const std::size_t n = x.dim(0), m = x.dim(1);
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), n * m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[i];
      }, y);
    }
    return y;
  }

  // softmax over groups of a rank-1 tensor; seg[i] in [0, n_segments) names
  // the group of element i. Elements of empty segments do not exist; segment
  // membership order is irrelevant up to float addition order.
  Tensor segment_softmax(const Tensor& x, const std::vector<std::size_t>& seg, std::size_t n_segments) {
    require_rank(x, 1, "segment_softmax");
    if (seg.size() != x.size()) throw ShapeMismatch("segment_softmax: seg length");
    for (std::size_t s : seg)
      if (s >= n_segments) throw ShapeMismatch("segment_softmax: segment id out of range");
    std::vector<double> mx(n_segments, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < seg.size(); ++i) mx[seg[i]] = std::max(mx[seg[i]], x.values()[i]);
    std::vector<double> z(n_segments, 0.0), out(x.size());
    for (std::size_t i = 0; i < seg.size(); ++i) z[seg[i]] += std::exp(x.values()[i] - mx[seg[i]]);
    for (std::size_t i = 0; i < seg.size(); ++i)
      out[i] = std::exp(x.values()[i] - mx[seg[i]]) / z[seg[i]];
    Tensor y = make(x.shape(), std::move(out), x.requires_grad(), "segment_softmax");
    if (y.requires_grad()) {
      record([x, y, seg, n_segments](Gradients& g) {
        const auto& dy = g.at(y);
        const auto& s = y.values();
        std::vector<double> dot(n_segments, 0.0);
        for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += dy[i] * s[i];
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < seg.size(); ++i) dx[i] += s[i] * (dy[i] - dot[seg[i]]);
      }, y);
    }
    return y;
  }

  // scatter-add rows of x into n_segments output rows
  Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& seg, std::size_t n_segments) {
    require_rank(x, 2, "segment_sum");
    if (seg.size() != x.dim(0)) throw ShapeMismatch("segment_sum: seg length");
    const std::size_t m = x.dim(1);
    for (std::size_t s : seg)
      if (s >= n_segments) throw ShapeMismatch("segment_sum: segment id out of range");
    std::vector<double> out(n_segments * m, 0.0);
    for (std::size_t i = 0; i < seg.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) out[seg[i] * m + j] += x.values()[i * m + j];
    Tensor y = make({n_segments, m}, std::move(out), x.requires_grad(), "segment_sum");
    if (y.requires_grad()) {
      record([x, y, seg](Gradients& g) {
        const std::size_t m = x.dim(1);
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < seg.size(); ++i)
          for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[seg[i] * m + j];
      }, y);
    }
    return y;
  }

  // per-row cross entropy of logits [n,c] against integer labels; stable
  // logsumexp form, gradient is softmax - onehot
  Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) throw ShapeMismatch("softmax_cross_entropy: label count");
    for (std::size_t l : labels)
      if (l >= c) throw ShapeMismatch("softmax_cross_entropy: label out of range");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* v = logits.values().data() + i * c;
      double mx = v[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(v[j] - mx);
      out[i] = mx + std::log(z) - v[labels[i]];
    }
    Tensor y = make({n}, std::move(out), logits.requires_grad(), "softmax_cross_entropy");
    if (y.requires_grad()) {
      record([logits, y, labels](Gradients& g) {
        const std::size_t n = logits.dim(0), c = logits.dim(1);
        const auto& dy = g.at(y);
        auto& dx = g.slot(logits.id(), n * c);
        for (std::size_t i = 0; i < n; ++i) {
          const double* v = logits.values().data() + i * c;
          double mx = v[0];
          for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[j]);
          double z = 0.0;
          for (std::size_t j = 0; j < c; ++j) z += std::exp(v[j] - mx);
          for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(v[j] - mx) / z;
            dx[i * c + j] += dy[i] * (p - (j == labels[i] ? 1.0 : 0.0));
          }
        }
      }, y);
    }
    return y;
  }

  // identity forward, negated gradient (adversarial hook)
  Tensor grad_reverse(const Tensor& x) {
    Tensor y = make(x.shape(), std::vector<double>(x.values()), x.requires_grad(), "grad_reverse");
    if (y.requires_grad()) {
      record([x, y](Gradients& g) {
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] -= dy[i];
      }, y);
    }
    return y;
  }

  // ---- backward ----------------------------------------------------------

  Gradients backward(const Tensor& loss) {
    if (loss.size() != 1) throw NonScalarLoss();
    Gradients g(next_id_);
    g.slot(loss.id(), 1)[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(g);
    return g;
  }

 private:
  Tensor make(Shape shape, std::vector<double> values, bool requires_grad, const char* op) {
    for (double v : values)
      if (!std::isfinite(v)) throw NonFiniteValue(op);
    Tensor t;
    t.id_ = next_id_++;
    t.shape_ = std::move(shape);
    t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
    t.requires_grad_ = requires_grad;
    return t;
  }

  template <typename Fwd, typename Grad>
  Tensor unary(const Tensor& x, const char* op, Fwd fwd, Grad grad) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
    Tensor y = make(x.shape(), std::move(out), x.requires_grad(), op);
    if (y.requires_grad()) {
      record([x, y, grad](Gradients& g) {
        const auto& dy = g.at(y);
        auto& dx = g.slot(x.id(), x.size());
        for (std::size_t i = 0; i < dy.size(); ++i)
          dx[i] += dy[i] * grad(x.values()[i], y.values()[i]);
      }, y);
    }
    return y;
  }

  Tensor add_sub(const Tensor& a, const Tensor& b, double sign) {
    // broadcast forms: same shape, [n,m]+[m], [n,m]+[1,m], x+[1]
    enum class Mode { Same, Row, Scalar } mode;
    if (a.shape() == b.shape()) mode = Mode::Same;
    else if (b.size() == 1) mode = Mode::Scalar;
    else if (a.rank() == 2 && ((b.rank() == 1 && b.dim(0) == a.dim(1)) ||
                               (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == a.dim(1))))
      mode = Mode::Row;
    else
      throw ShapeMismatch("add: incompatible shapes");
    const std::size_t m = a.rank() == 2 ? a.dim(1) : a.size();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double bv = mode == Mode::Same ? b.values()[i]
                       : mode == Mode::Scalar ? b.values()[0]
                                              : b.values()[i % m];
      out[i] = a.values()[i] + sign * bv;
    }
    Tensor y = make(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                    sign > 0 ? "add" : "sub");
    if (y.requires_grad()) {
      record([a, b, y, mode, m, sign](Gradients& g) {
        const auto& dy = g.at(y);
        if (a.requires_grad()) {
          auto& da = g.slot(a.id(), a.size());
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (b.requires_grad()) {
          auto& db = g.slot(b.id(), b.size());
          for (std::size_t i = 0; i < dy.size(); ++i) {
            const std::size_t bi = mode == Mode::Same ? i : mode == Mode::Scalar ? 0 : i % m;
            db[bi] += sign * dy[i];
          }
        }
      }, y);
    }
    return y;
  }

  void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
      throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(r));
  }

  // dead branches (outputs that never reach the loss) are skipped
  void record(std::function<void(Gradients&)> fn, const Tensor& out) {
    records_.push_back([fn = std::move(fn), out](Gradients& g) {
      if (!g.has(out)) return;
      fn(g);
    });
  }

  std::size_t next_id_ = 0;
  std::vector<std::function<void(Gradients&)>> records_;
};

// Central-difference gradient audit. f builds a scalar loss from a leaf
// placed on the tape it is given; returns the max relative error between
// the analytic gradient and central differences, with denominator
// max(|a|,|b|,1e-8).
inline double finite_difference_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f,
    const std::vector<double>& x, const Shape& shape, double h = 1e-5) {
  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape tape;
    Tensor leaf = tape.leaf(shape, x, true);
    Tensor loss = f(tape, leaf);
    Gradients g = tape.backward(loss);
    if (g.has(leaf)) analytic = g.at(leaf);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    Tape tp, tm;
    const double fp = f(tp, tp.leaf(shape, xp, false)).scalar();
    const double fm = f(tm, tm.leaf(shape, xm, false)).scalar();
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-8});
    worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace bacite
