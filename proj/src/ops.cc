// Copyright 2026 The Memlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "memlab/ops.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>
#include <numbers>
#include <utility>

#include <Eigen/Core>
#include <fmt/format.h>

#include "memlab/error.h"

namespace memlab {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

constexpr double kMaskedLogit = -1e30;
constexpr double kUnderflow = -700.0;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// tanh through the vectorised exp; Eigen only vectorises tanh for float.
ConstMatMap AsMatrix(std::span<const double> s, int64_t rows, int64_t cols) {
  return ConstMatMap(s.data(), rows, cols);
}
MatMap AsMatrix(std::span<double> s, int64_t rows, int64_t cols) {
  return MatMap(s.data(), rows, cols);
}

void CheckFinite([[maybe_unused]] const Tensor& t,
                 [[maybe_unused]] const char* op) {
#ifdef MEMLAB_CHECK_FINITE
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNumeric,
                  fmt::format("{} produced a non-finite value", op));
    }
  }
#endif
}

// Wraps up an op: finite check, and recording when any input is tracked.
Tensor Finish(Tape& tape, Tensor out, std::vector<Tensor> inputs,
              Tape::BackwardFn backward, const char* op) {
  CheckFinite(out, op);
  bool tracked = false;
  for (const Tensor& in : inputs) tracked = tracked || in.tracked();
  if (tracked) {
    out.set_tracked(true);
    tape.Record(out, std::move(inputs), std::move(backward));
  }
  return out;
}

[[noreturn]] void ShapeMismatch(const char* op, const Tensor& a,
                                const Tensor& b) {
  throw Error(ErrorCode::kDimension,
              fmt::format("{}: incompatible shapes {} and {}", op,
                          ShapeToString(a.shape()), ShapeToString(b.shape())));
}

void RequireRank(const char* op, const Tensor& t, int64_t rank) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::kDimension,
                fmt::format("{}: expected rank {}, got shape {}", op, rank,
                            ShapeToString(t.shape())));
  }
}

void RequireAtLeastRank(const char* op, const Tensor& t, int64_t rank) {
  if (t.rank() < rank) {
    throw Error(ErrorCode::kDimension,
                fmt::format("{}: expected rank >= {}, got shape {}", op, rank,
                            ShapeToString(t.shape())));
  }
}

}  // namespace

Tensor MatMul(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireAtLeastRank("matmul", a, 2);
  RequireRank("matmul", b, 2);
  const int64_t k = a.dim(-1);
  if (b.dim(0) != k) ShapeMismatch("matmul", a, b);
  const int64_t m = a.numel() / k;
  const int64_t n = b.dim(1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::Uninitialized(out_shape);
  AsMatrix(out.mutable_data(), m, n).noalias() =
      AsMatrix(a.data(), m, k) * AsMatrix(b.data(), k, n);
  return Finish(
      tape, out, {a, b},
      [a, b, out, m, k, n]() mutable {
        auto dc = AsMatrix(out.grad(), m, n);
        if (a.tracked()) {
          AsMatrix(a.mutable_grad(), m, k).noalias() +=
              dc * AsMatrix(b.data(), k, n).transpose();
        }
        if (b.tracked()) {
          AsMatrix(b.mutable_grad(), k, n).noalias() +=
              AsMatrix(a.data(), m, k).transpose() * dc;
        }
      },
      "matmul");
}

Tensor MatMulTransposed(Tape& tape, const Tensor& a, const Tensor& b) {
  RequireAtLeastRank("matmul_transposed", a, 2);
  RequireRank("matmul_transposed", b, 2);
  const int64_t k = a.dim(-1);
  if (b.dim(1) != k) ShapeMismatch("matmul_transposed", a, b);
  const int64_t m = a.numel() / k;
  const int64_t n = b.dim(0);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::Uninitialized(out_shape);
  AsMatrix(out.mutable_data(), m, n).noalias() =
      AsMatrix(a.data(), m, k) * AsMatrix(b.data(), n, k).transpose();
  return Finish(
      tape, out, {a, b},
      [a, b, out, m, k, n]() mutable {
        auto dc = AsMatrix(out.grad(), m, n);
        if (a.tracked()) {
          AsMatrix(a.mutable_grad(), m, k).noalias() +=
              dc * AsMatrix(b.data(), n, k);
        }
        if (b.tracked()) {
          AsMatrix(b.mutable_grad(), n, k).noalias() +=
              dc.transpose() * AsMatrix(a.data(), m, k);
        }
      },
      "matmul_transposed");
}

Tensor BatchedMatMul(Tape& tape, const Tensor& a, const Tensor& b,
                     bool transpose_b) {
  RequireRank("batched_matmul", a, 3);
  RequireRank("batched_matmul", b, 3);
  const int64_t batch = a.dim(0);
  const int64_t m = a.dim(1);
  const int64_t k = a.dim(2);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  const int64_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) ShapeMismatch("batched_matmul", a, b);
  Tensor out = Tensor::Uninitialized({batch, m, n});
  const int64_t sa = m * k, sb = k * n, sc = m * n;
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.mutable_data().data();
    for (int64_t i = 0; i < batch; ++i) {
      ConstMatMap am(pa + i * sa, m, k);
      MatMap cm(pc + i * sc, m, n);
      if (transpose_b) {
        cm.noalias() = am * ConstMatMap(pb + i * sb, n, k).transpose();
      } else {
        cm.noalias() = am * ConstMatMap(pb + i * sb, k, n);
      }
    }
  }
  return Finish(
      tape, out, {a, b},
      [a, b, out, batch, m, k, n, sa, sb, sc, transpose_b]() mutable {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        const double* pdc = out.grad().data();
        double* pda = a.tracked() ? a.mutable_grad().data() : nullptr;
        double* pdb = b.tracked() ? b.mutable_grad().data() : nullptr;
        for (int64_t i = 0; i < batch; ++i) {
          ConstMatMap dc(pdc + i * sc, m, n);
          if (pda != nullptr) {
            MatMap da(pda + i * sa, m, k);
            if (transpose_b) {
              da.noalias() += dc * ConstMatMap(pb + i * sb, n, k);
            } else {
              da.noalias() += dc * ConstMatMap(pb + i * sb, k, n).transpose();
            }
          }
          if (pdb != nullptr) {
            ConstMatMap am(pa + i * sa, m, k);
            if (transpose_b) {
              MatMap(pdb + i * sb, n, k).noalias() += dc.transpose() * am;
            } else {
              MatMap(pdb + i * sb, k, n).noalias() += am.transpose() * dc;
            }
          }
        }
      },
      "batched_matmul");
}

Tensor Add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("add", a, b);
  Tensor out = Tensor::Uninitialized(a.shape());
  const int64_t n = a.numel();
  VecMap(out.mutable_data().data(), n) =
      ConstVecMap(a.data().data(), n) + ConstVecMap(b.data().data(), n);
  return Finish(
      tape, out, {a, b},
      [a, b, out, n]() mutable {
        ConstVecMap g(out.grad().data(), n);
        if (a.tracked()) VecMap(a.mutable_grad().data(), n) += g;
        if (b.tracked()) VecMap(b.mutable_grad().data(), n) += g;
      },
      "add");
}

Tensor AddBroadcast(Tape& tape, const Tensor& x, const Tensor& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() ||
      !std::equal(ys.begin(), ys.end(), xs.end() - ys.size())) {
    ShapeMismatch("add_broadcast", x, y);
  }
  const int64_t inner = y.numel();
  const int64_t outer = inner == 0 ? 0 : x.numel() / inner;
  Tensor out = Tensor::Uninitialized(xs);
  AsMatrix(out.mutable_data(), outer, inner) =
      AsMatrix(x.data(), outer, inner).rowwise() +
      AsMatrix(y.data(), 1, inner).row(0);
  return Finish(
      tape, out, {x, y},
      [x, y, out, outer, inner]() mutable {
        auto g = AsMatrix(out.grad(), outer, inner);
        if (x.tracked()) AsMatrix(x.mutable_grad(), outer, inner) += g;
        if (y.tracked()) {
          auto yg = VecMap(y.mutable_grad().data(), inner);
          for (int64_t r = 0; r < outer; ++r) {
            yg += ConstVecMap(out.grad().data() + r * inner, inner);
          }
        }
      },
      "add_broadcast");
}

Tensor Mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) ShapeMismatch("mul", a, b);
  Tensor out = Tensor::Uninitialized(a.shape());
  const int64_t n = a.numel();
  VecMap(out.mutable_data().data(), n) =
      ConstVecMap(a.data().data(), n).cwiseProduct(
          ConstVecMap(b.data().data(), n));
  return Finish(
      tape, out, {a, b},
      [a, b, out, n]() mutable {
        ConstVecMap g(out.grad().data(), n);
        if (a.tracked()) {
          VecMap(a.mutable_grad().data(), n) +=
              g.cwiseProduct(ConstVecMap(b.data().data(), n));
        }
        if (b.tracked()) {
          VecMap(b.mutable_grad().data(), n) +=
              g.cwiseProduct(ConstVecMap(a.data().data(), n));
        }
      },
      "mul");
}

Tensor Scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out = Tensor::Uninitialized(x.shape());
  const int64_t n = x.numel();
  VecMap(out.mutable_data().data(), n) =
      ConstVecMap(x.data().data(), n) * factor;
  return Finish(
      tape, out, {x},
      [x, out, n, factor]() mutable {
        VecMap(x.mutable_grad().data(), n) +=
            ConstVecMap(out.grad().data(), n) * factor;
      },
      "scale");
}

Tensor Sum(Tape& tape, const Tensor& x) {
  const int64_t n = x.numel();
  Tensor out = Tensor::Scalar(ConstVecMap(x.data().data(), n).sum());
  return Finish(
      tape, out, {x},
      [x, out, n]() mutable {
        VecMap(x.mutable_grad().data(), n).array() += out.grad()[0];
      },
      "sum");
}

Tensor Gelu(Tape& tape, const Tensor& x) {
  const int64_t n = x.numel();
  Tensor out = Tensor::Uninitialized(x.shape());
  auto tanh_u = std::make_shared<Buffer>(n);
  {
    auto v = ConstVecMap(x.data().data(), n).array();
    auto t = VecMap(tanh_u->data(), n).array();
    t = kGeluC * (v + kGeluA * v.cube());
    t = 1.0 - 2.0 / ((2.0 * t).exp() + 1.0);
    VecMap(out.mutable_data().data(), n).array() = 0.5 * v * (1.0 + t);
  }
  if (!x.tracked()) tanh_u.reset();
  return Finish(
      tape, out, {x},
      [x, out, n, tanh_u]() mutable {
        auto v = ConstVecMap(x.data().data(), n).array();
        auto t = ConstVecMap(tanh_u->data(), n).array();
        VecMap(x.mutable_grad().data(), n).array() +=
            ConstVecMap(out.grad().data(), n).array() *
            (0.5 * (1.0 + t) +
             0.5 * v * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluA * v.square()));
      },
      "gelu");
}

Tensor LayerNorm(Tape& tape, const Tensor& x, const Tensor& gain,
                 const Tensor& bias, double eps) {
  RequireRank("layer_norm gain", gain, 1);
  RequireRank("layer_norm bias", bias, 1);
  const int64_t d = x.dim(-1);
  if (gain.dim(0) != d) ShapeMismatch("layer_norm", x, gain);
  if (bias.dim(0) != d) ShapeMismatch("layer_norm", x, bias);
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::Uninitialized(x.shape());
  // Normalised input and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<Buffer>(x.numel());
  auto inv_std = std::make_shared<Buffer>(rows);
  {
    const double* px = x.data().data();
    const double* pg = gain.data().data();
    const double* pb = bias.data().data();
    double* po = out.mutable_data().data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = px + r * d;
      double mean = 0.0;
      for (int64_t j = 0; j < d; ++j) mean += xr[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      double* hr = xhat->data() + r * d;
      double* orow = po + r * d;
      for (int64_t j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean) * is;
        orow[j] = hr[j] * pg[j] + pb[j];
      }
    }
  }
  return Finish(
      tape, out, {x, gain, bias},
      [x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
        const double* pdy = out.grad().data();
        const double* pg = gain.data().data();
        const double* ph = xhat->data();
        if (gain.tracked() || bias.tracked()) {
          double* pdg = gain.tracked() ? gain.mutable_grad().data() : nullptr;
          double* pdb = bias.tracked() ? bias.mutable_grad().data() : nullptr;
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < d; ++j) {
              const double g = pdy[r * d + j];
              if (pdg != nullptr) pdg[j] += g * ph[r * d + j];
              if (pdb != nullptr) pdb[j] += g;
            }
          }
        }
        if (x.tracked()) {
          double* pdx = x.mutable_grad().data();
          Buffer dh(d);
          for (int64_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              dh[j] = pdy[r * d + j] * pg[j];
              sum_dh += dh[j];
              sum_dh_h += dh[j] * ph[r * d + j];
            }
            const double scale = (*inv_std)[r] / static_cast<double>(d);
            for (int64_t j = 0; j < d; ++j) {
              pdx[r * d + j] +=
                  scale * (static_cast<double>(d) * dh[j] - sum_dh -
                           ph[r * d + j] * sum_dh_h);
            }
          }
        }
      },
      "layer_norm");
}

Tensor RowSoftmax(Tape& tape, const Tensor& x) {
  RequireAtLeastRank("row_softmax", x, 1);
  const int64_t n = x.dim(-1);
  if (n < 1) {
    throw Error(ErrorCode::kDimension,
                "row_softmax: last dimension must be >= 1, got shape " +
                    ShapeToString(x.shape()));
  }
  const int64_t rows = x.numel() / n;
  Tensor out = Tensor::Uninitialized(x.shape());
  {
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = px + r * n;
      double* orow = po + r * n;
      auto xa = ConstVecMap(xr, n).array();
      auto oa = VecMap(orow, n).array();
      const double mx = xa.maxCoeff();
      // Masked entries become exact zeros instead of denormals.
      oa = (xa - mx < kUnderflow).select(0.0, (xa - mx).exp());
      oa *= 1.0 / oa.sum();
    }
  }
  return Finish(
      tape, out, {x},
      [x, out, rows, n]() mutable {
        const double* py = out.data().data();
        const double* pg = out.grad().data();
        double* pdx = x.mutable_grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = py + r * n;
          const double* gr = pg + r * n;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
          double* dr = pdx + r * n;
          for (int64_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
      },
      "row_softmax");
}

Tensor CausalMask(Tape& tape, const Tensor& x) {
  RequireAtLeastRank("causal_mask", x, 2);
  const int64_t t = x.dim(-1);
  if (x.dim(-2) != t) {
    throw Error(ErrorCode::kDimension,
                "causal_mask: last two dims must be square, got shape " +
                    ShapeToString(x.shape()));
  }
  const int64_t mats = t == 0 ? 0 : x.numel() / (t * t);
  Tensor out = x.Clone();
  {
    double* po = out.mutable_data().data();
    for (int64_t b = 0; b < mats; ++b) {
      for (int64_t i = 0; i < t; ++i) {
        double* row = po + (b * t + i) * t;
        for (int64_t j = i + 1; j < t; ++j) row[j] = kMaskedLogit;
      }
    }
  }
  return Finish(
      tape, out, {x},
      [x, out, mats, t]() mutable {
        const double* pg = out.grad().data();
        double* pdx = x.mutable_grad().data();
        for (int64_t b = 0; b < mats; ++b) {
          for (int64_t i = 0; i < t; ++i) {
            const int64_t base = (b * t + i) * t;
            for (int64_t j = 0; j <= i; ++j) pdx[base + j] += pg[base + j];
          }
        }
      },
      "causal_mask");
}

Tensor CausalSoftmax(Tape& tape, const Tensor& x, double scale) {
  RequireAtLeastRank("causal_softmax", x, 2);
  const int64_t t = x.dim(-1);
  if (x.dim(-2) != t) {
    throw Error(ErrorCode::kDimension,
                "causal_softmax: last two dims must be square, got shape " +
                    ShapeToString(x.shape()));
  }
  const int64_t mats = t == 0 ? 0 : x.numel() / (t * t);
  Tensor out = Tensor::Uninitialized(x.shape());
  {
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t r = 0; r < mats * t; ++r) {
      const int64_t n = r % t + 1;  // row i sees columns 0..i
      auto xa = ConstVecMap(px + r * t, n).array();
      auto oa = VecMap(po + r * t, n).array();
      const double mx = xa.maxCoeff();
      oa = (scale * (xa - mx)).exp();
      oa *= 1.0 / oa.sum();
      std::fill(po + r * t + n, po + (r + 1) * t, 0.0);
    }
  }
  return Finish(
      tape, out, {x},
      [x, out, mats, t, scale]() mutable {
        const double* py = out.data().data();
        const double* pg = out.grad().data();
        double* pdx = x.mutable_grad().data();
        for (int64_t r = 0; r < mats * t; ++r) {
          const int64_t n = r % t + 1;
          auto y = ConstVecMap(py + r * t, n).array();
          auto g = ConstVecMap(pg + r * t, n).array();
          const double dot = (y * g).sum();
          VecMap(pdx + r * t, n).array() += scale * y * (g - dot);
        }
      },
      "causal_softmax");
}

Tensor GatherRows(Tape& tape, const Tensor& table,
                  std::span<const int64_t> rows) {
  RequireRank("gather_rows", table, 2);
  const int64_t n_rows = table.dim(0);
  const int64_t cols = table.dim(1);
  for (int64_t r : rows) {
    if (r < 0 || r >= n_rows) {
      throw Error(ErrorCode::kDimension,
                  fmt::format("gather_rows: row {} out of range for shape {}",
                              r, ShapeToString(table.shape())));
    }
  }
  const int64_t count = static_cast<int64_t>(rows.size());
  Tensor out = Tensor::Uninitialized({count, cols});
  {
    const double* pt = table.data().data();
    double* po = out.mutable_data().data();
    for (int64_t i = 0; i < count; ++i) {
      std::copy_n(pt + rows[i] * cols, cols, po + i * cols);
    }
  }
  std::vector<int64_t> index(rows.begin(), rows.end());
  return Finish(
      tape, out, {table},
      [table, out, index = std::move(index), cols]() mutable {
        const double* pg = out.grad().data();
        double* pdt = table.mutable_grad().data();
        for (size_t i = 0; i < index.size(); ++i) {
          double* dst = pdt + index[i] * cols;
          const double* src = pg + static_cast<int64_t>(i) * cols;
          for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Tensor Reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (ShapeNumel(shape) != x.numel()) {
    throw Error(ErrorCode::kDimension,
                fmt::format("reshape: cannot view {} as {}",
                            ShapeToString(x.shape()), ShapeToString(shape)));
  }
  Tensor out = Tensor::Uninitialized(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  const int64_t n = x.numel();
  return Finish(
      tape, out, {x},
      [x, out, n]() mutable {
        VecMap(x.mutable_grad().data(), n) +=
            ConstVecMap(out.grad().data(), n);
      },
      "reshape");
}

Tensor PrependRows(Tape& tape, const Tensor& rows, const Tensor& x) {
  RequireRank("prepend_rows", rows, 2);
  RequireRank("prepend_rows", x, 3);
  if (rows.dim(1) != x.dim(2)) ShapeMismatch("prepend_rows", rows, x);
  const int64_t batch = x.dim(0);
  const int64_t l = rows.dim(0);
  const int64_t t = x.dim(1);
  const int64_t e = x.dim(2);
  Tensor out = Tensor::Uninitialized({batch, l + t, e});
  {
    const double* pr = rows.data().data();
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t b = 0; b < batch; ++b) {
      double* dst = po + b * (l + t) * e;
      std::copy_n(pr, l * e, dst);
      std::copy_n(px + b * t * e, t * e, dst + l * e);
    }
  }
  return Finish(
      tape, out, {rows, x},
      [rows, x, out, batch, l, t, e]() mutable {
        const double* pg = out.grad().data();
        if (rows.tracked()) {
          auto dr = AsMatrix(rows.mutable_grad(), 1, l * e);
          for (int64_t b = 0; b < batch; ++b) {
            dr += ConstMatMap(pg + b * (l + t) * e, 1, l * e);
          }
        }
        if (x.tracked()) {
          double* pdx = x.mutable_grad().data();
          for (int64_t b = 0; b < batch; ++b) {
            const double* src = pg + (b * (l + t) + l) * e;
            double* dst = pdx + b * t * e;
            for (int64_t j = 0; j < t * e; ++j) dst[j] += src[j];
          }
        }
      },
      "prepend_rows");
}

Tensor SplitHeads(Tape& tape, const Tensor& x, int64_t n_heads) {
  RequireRank("split_heads", x, 3);
  const int64_t batch = x.dim(0), t = x.dim(1), width = x.dim(2);
  if (n_heads < 1 || width % n_heads != 0) {
    throw Error(ErrorCode::kDimension,
                fmt::format("split_heads: width {} not divisible by {} heads",
                            width, n_heads));
  }
  const int64_t d = width / n_heads;
  Tensor out = Tensor::Uninitialized({batch * n_heads, t, d});
  {
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t i = 0; i < t; ++i) {
        const double* src = px + (b * t + i) * width;
        for (int64_t h = 0; h < n_heads; ++h) {
          std::copy_n(src + h * d, d, po + ((b * n_heads + h) * t + i) * d);
        }
      }
    }
  }
  return Finish(
      tape, out, {x},
      [x, out, batch, t, width, n_heads, d]() mutable {
        const double* pg = out.grad().data();
        double* pdx = x.mutable_grad().data();
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t i = 0; i < t; ++i) {
            double* dst = pdx + (b * t + i) * width;
            for (int64_t h = 0; h < n_heads; ++h) {
              const double* src = pg + ((b * n_heads + h) * t + i) * d;
              for (int64_t j = 0; j < d; ++j) dst[h * d + j] += src[j];
            }
          }
        }
      },
      "split_heads");
}

Tensor MergeHeads(Tape& tape, const Tensor& x, int64_t n_heads) {
  RequireRank("merge_heads", x, 3);
  if (n_heads < 1 || x.dim(0) % n_heads != 0) {
    throw Error(ErrorCode::kDimension,
                fmt::format("merge_heads: leading dim {} not divisible by {}",
                            x.dim(0), n_heads));
  }
  const int64_t batch = x.dim(0) / n_heads, t = x.dim(1), d = x.dim(2);
  const int64_t width = n_heads * d;
  Tensor out = Tensor::Uninitialized({batch, t, width});
  {
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t i = 0; i < t; ++i) {
        double* dst = po + (b * t + i) * width;
        for (int64_t h = 0; h < n_heads; ++h) {
          std::copy_n(px + ((b * n_heads + h) * t + i) * d, d, dst + h * d);
        }
      }
    }
  }
  return Finish(
      tape, out, {x},
      [x, out, batch, t, width, n_heads, d]() mutable {
        const double* pg = out.grad().data();
        double* pdx = x.mutable_grad().data();
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t i = 0; i < t; ++i) {
            const double* src = pg + (b * t + i) * width;
            for (int64_t h = 0; h < n_heads; ++h) {
              double* dst = pdx + ((b * n_heads + h) * t + i) * d;
              for (int64_t j = 0; j < d; ++j) dst[j] += src[h * d + j];
            }
          }
        }
      },
      "merge_heads");
}

Tensor TokenCrossEntropy(Tape& tape, const Tensor& logits,
                         std::span<const int32_t> targets,
                         const std::vector<bool>& mask) {
  RequireRank("token_cross_entropy", logits, 2);
  const int64_t t = logits.dim(0);
  const int64_t v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t ||
      static_cast<int64_t>(mask.size()) != t) {
    throw Error(ErrorCode::kDimension,
                fmt::format("token_cross_entropy: logits {} with {} targets "
                            "and {} mask entries",
                            ShapeToString(logits.shape()), targets.size(),
                            mask.size()));
  }
  std::vector<int64_t> active;
  for (int64_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= v) {
      throw Error(ErrorCode::kVocab,
                  fmt::format("token_cross_entropy: target {} outside [0, {})",
                              targets[i], v));
    }
    active.push_back(i);
  }
  if (active.empty()) {
    throw Error(ErrorCode::kDegenerateMask,
                "token_cross_entropy: mask selects no positions");
  }
  const double inv_count = 1.0 / static_cast<double>(active.size());
  auto probs = std::make_shared<Buffer>(active.size() * v);
  double total = 0.0;
  {
    const double* pl = logits.data().data();
    for (size_t a = 0; a < active.size(); ++a) {
      const double* row = pl + active[a] * v;
      double* pr = probs->data() + a * v;
      auto ra = ConstVecMap(row, v).array();
      auto pa = VecMap(pr, v).array();
      const double mx = ra.maxCoeff();
      pa = (ra - mx).exp();
      const double z = pa.sum();
      pa *= 1.0 / z;
      total += -(row[targets[active[a]]] - mx - std::log(z));
    }
  }
  Tensor out = Tensor::Scalar(total * inv_count);
  std::vector<int32_t> target_copy(targets.begin(), targets.end());
  return Finish(
      tape, out, {logits},
      [logits, out, probs, active = std::move(active),
       target_copy = std::move(target_copy), v, inv_count]() mutable {
        const double g = out.grad()[0] * inv_count;
        double* pdl = logits.mutable_grad().data();
        for (size_t a = 0; a < active.size(); ++a) {
          double* dst = pdl + active[a] * v;
          const double* pr = probs->data() + a * v;
          for (int64_t j = 0; j < v; ++j) dst[j] += g * pr[j];
          dst[target_copy[active[a]]] -= g;
        }
      },
      "token_cross_entropy");
}

}  // namespace memlab
