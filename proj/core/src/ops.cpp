#include "udmt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace udmt::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("ops: unbound Var");
  return *a.tape();
}

void same_tape(const char* kernel, const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error(fmt::format("{}: operands live on different tapes", kernel));
}

[[noreturn]] void shape_fail(const char* kernel, const std::string& what, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: {} (got {} and {})", kernel, what, shape_str(a), shape_str(b)));
}

std::size_t last_dim(const Shape& s) { return s.back(); }

}  // namespace

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  same_tape("matmul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) shape_fail("matmul", "operands must be rank 2", av.shape(), bv.shape());
  const auto m = av.dim(0), k = av.dim(1);
  const auto n = transpose_b ? bv.dim(0) : bv.dim(1);
  const auto kb = transpose_b ? bv.dim(1) : bv.dim(0);
  if (k != kb) shape_fail("matmul", "inner dimensions differ", av.shape(), bv.shape());

  Tensor out({m, n});
  CMap A(av.ptr(), m, k);
  MMap C(out.mutable_data().data(), m, n);
  if (transpose_b) {
    CMap B(bv.ptr(), n, k);
    C.noalias() = A * B.transpose();
  } else {
    CMap B(bv.ptr(), k, n);
    C.noalias() = A * B;
  }
  return tape_of(a).record(std::move(out), {a, b}, [av, bv, m, n, k, transpose_b](BackwardContext& ctx) {
    CMap dC(ctx.grad_out().data(), m, n);
    CMap A(av.ptr(), m, k);
    if (ctx.needs(0)) {
      MMap dA(ctx.grad_in(0).data(), m, k);
      if (transpose_b) {
        dA.noalias() += dC * CMap(bv.ptr(), n, k);
      } else {
        dA.noalias() += dC * CMap(bv.ptr(), k, n).transpose();
      }
    }
    if (ctx.needs(1)) {
      if (transpose_b) {
        MMap dB(ctx.grad_in(1).data(), n, k);
        dB.noalias() += dC.transpose() * A;
      } else {
        MMap dB(ctx.grad_in(1).data(), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  same_tape("bmm", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3) shape_fail("bmm", "operands must be rank 3", av.shape(), bv.shape());
  const auto batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const auto n = transpose_b ? bv.dim(1) : bv.dim(2);
  const auto kb = transpose_b ? bv.dim(2) : bv.dim(1);
  if (bv.dim(0) != batch) shape_fail("bmm", "batch dimensions differ", av.shape(), bv.shape());
  if (k != kb) shape_fail("bmm", "inner dimensions differ", av.shape(), bv.shape());

  Tensor out({batch, m, n});
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < batch; ++i) {
    CMap A(av.ptr() + i * m * k, m, k);
    MMap C(od.data() + i * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * CMap(bv.ptr() + i * n * k, n, k).transpose();
    } else {
      C.noalias() = A * CMap(bv.ptr() + i * k * n, k, n);
    }
  }
  return tape_of(a).record(std::move(out), {a, b}, [av, bv, batch, m, n, k, transpose_b](BackwardContext& ctx) {
    const double* g = ctx.grad_out().data();
    double* ga = ctx.needs(0) ? ctx.grad_in(0).data() : nullptr;
    double* gb = ctx.needs(1) ? ctx.grad_in(1).data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      CMap dC(g + i * m * n, m, n);
      CMap A(av.ptr() + i * m * k, m, k);
      if (transpose_b) {
        CMap B(bv.ptr() + i * n * k, n, k);
        if (ga) MMap(ga + i * m * k, m, k).noalias() += dC * B;
        if (gb) MMap(gb + i * n * k, n, k).noalias() += dC.transpose() * A;
      } else {
        CMap B(bv.ptr() + i * k * n, k, n);
        if (ga) MMap(ga + i * m * k, m, k).noalias() += dC * B.transpose();
        if (gb) MMap(gb + i * k * n, k, n).noalias() += A.transpose() * dC;
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  same_tape("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool bias = bv.rank() == 1 && av.rank() > 1;
  if (bias) {
    if (bv.dim(0) != last_dim(av.shape())) shape_fail("add", "bias length must match last dim", av.shape(), bv.shape());
  } else if (av.shape() != bv.shape()) {
    shape_fail("add", "shapes must match (or b is a last-dim bias)", av.shape(), bv.shape());
  }
  Tensor out(av.shape());
  auto o = out.mutable_data();
  const auto n = av.numel();
  const auto width = bv.numel();
  const double* x = av.ptr();
  const double* y = bv.ptr();
  if (bias) {
    for (std::size_t i = 0; i < n; i += width) {
      for (std::size_t j = 0; j < width; ++j) o[i + j] = x[i + j] + y[j];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
  }
  return tape_of(a).record(std::move(out), {a, b}, [n, width, bias](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (ctx.needs(1)) {
      auto gb = ctx.grad_in(1);
      if (bias) {
        for (std::size_t i = 0; i < n; i += width) {
          for (std::size_t j = 0; j < width; ++j) gb[j] += g[i + j];
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  same_tape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) shape_fail("mul", "shapes must match", av.shape(), bv.shape());
  Tensor out(av.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [av, bv](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    if (ctx.needs(0)) {
      auto ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (ctx.needs(1)) {
      auto gb = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  const auto& av = a.value();
  Tensor out(av.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  return tape_of(a).record(std::move(out), {a}, [factor](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var relu(const Var& a) {
  const auto& av = a.value();
  Tensor out(av.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0;
  return tape_of(a).record(std::move(out), {a}, [av](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var sum(const Var& a) {
  const auto& av = a.value();
  double s = 0.0;
  for (double x : av.data()) s += x;
  return tape_of(a).record(Tensor::scalar(s), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (auto& x : ctx.grad_in(0)) x += g;
  });
}

namespace {

// y = softmax(x) backward: dx = y * (dy - <dy, y>) per row.
void softmax_rows_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx,
                           std::size_t width) {
  for (std::size_t r = 0; r < y.size(); r += width) {
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) dot += dy[r + j] * y[r + j];
    for (std::size_t j = 0; j < width; ++j) dx[r + j] += y[r + j] * (dy[r + j] - dot);
  }
}

}  // namespace

Var softmax_lastdim(const Var& a) {
  const auto& av = a.value();
  const auto width = last_dim(av.shape());
  Tensor out(av.shape());
  auto o = out.mutable_data();
  const double* x = av.ptr();
  for (std::size_t r = 0; r < av.numel(); r += width) {
    double mx = x[r];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[r + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[r + j] = std::exp(x[r + j] - mx);
      z += o[r + j];
    }
    for (std::size_t j = 0; j < width; ++j) o[r + j] /= z;
  }
  Tensor y = out;
  return tape_of(a).record(std::move(out), {a}, [y, width](BackwardContext& ctx) {
    softmax_rows_backward(y.data(), ctx.grad_out(), ctx.grad_in(0), width);
  });
}

Var masked_softmax_lastdim(const Var& scores, std::span<const std::uint8_t> keep, std::size_t heads) {
  const auto& sv = scores.value();
  if (sv.rank() != 3) throw ShapeError(fmt::format("masked_softmax: scores must be rank 3, got {}", shape_str(sv.shape())));
  const auto n = sv.dim(0), tq = sv.dim(1), tk = sv.dim(2);
  if (heads == 0 || n % heads != 0 || keep.size() != (n / heads) * tq * tk) {
    throw ShapeError(fmt::format("masked_softmax: mask of {} entries does not cover scores {} with {} heads",
                                 keep.size(), shape_str(sv.shape()), heads));
  }
  Tensor out(sv.shape());
  auto o = out.mutable_data();
  const double* x = sv.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* km = keep.data() + (i / heads) * tq * tk;
    for (std::size_t q = 0; q < tq; ++q) {
      const std::size_t r = (i * tq + q) * tk;
      const std::uint8_t* kr = km + q * tk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        if (kr[j]) mx = std::max(mx, x[r + j]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        o[r + j] = kr[j] ? std::exp(x[r + j] - mx) : 0.0;
        z += o[r + j];
      }
      for (std::size_t j = 0; j < tk; ++j) o[r + j] /= z;
    }
  }
  Tensor y = out;
  return tape_of(scores).record(std::move(out), {scores}, [y, tk](BackwardContext& ctx) {
    softmax_rows_backward(y.data(), ctx.grad_out(), ctx.grad_in(0), tk);
  });
}

Var layer_norm_lastdim(const Var& x, const Var& gain, const Var& bias, double eps) {
  same_tape("layer_norm_lastdim", x, gain);
  same_tape("layer_norm_lastdim", x, bias);
  const auto& xv = x.value();
  const auto width = last_dim(xv.shape());
  if (gain.value().shape() != Shape{width}) {
    shape_fail("layer_norm_lastdim", "gain must be [last dim]", xv.shape(), gain.value().shape());
  }
  if (bias.value().shape() != Shape{width}) {
    shape_fail("layer_norm_lastdim", "bias must be [last dim]", xv.shape(), bias.value().shape());
  }
  const auto rows = xv.numel() / width;
  Tensor normed(xv.shape());
  std::vector<double> rstd(rows);
  auto nd = normed.mutable_data();
  const double* in = xv.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += row[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(width);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) nd[r * width + j] = (row[j] - mean) * rstd[r];
  }
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor out(xv.shape());
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) o[r * width + j] = nd[r * width + j] * gv[j] + bv[j];
  }
  return tape_of(x).record(
      std::move(out), {x, gain, bias}, [normed, rstd = std::move(rstd), gv, rows, width](BackwardContext& ctx) {
        auto g = ctx.grad_out();
        const double* xh = normed.ptr();
        if (ctx.needs(1)) {
          auto gg = ctx.grad_in(1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gg[j] += g[r * width + j] * xh[r * width + j];
          }
        }
        if (ctx.needs(2)) {
          auto gb = ctx.grad_in(2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gb[j] += g[r * width + j];
          }
        }
        if (ctx.needs(0)) {
          auto gx = ctx.grad_in(0);
          const double inv_w = 1.0 / static_cast<double>(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = g[r * width + j] * gv[j];
              mean_d += d;
              mean_dx += d * xh[r * width + j];
            }
            mean_d *= inv_w;
            mean_dx *= inv_w;
            for (std::size_t j = 0; j < width; ++j) {
              const double d = g[r * width + j] * gv[j];
              gx[r * width + j] += rstd[r] * (d - mean_d - xh[r * width + j] * mean_dx);
            }
          }
        }
      });
}

Var embedding_lookup(const Var& table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw ShapeError(fmt::format("embedding_lookup: table must be rank 2, got {}", shape_str(tv.shape())));
  const auto vocab = tv.dim(0), width = tv.dim(1);
  if (ids.empty()) throw ShapeError("embedding_lookup: empty index list");
  Tensor out({ids.size(), width});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range(fmt::format("embedding_lookup: index {} out of range for vocab size {}", ids[i], vocab));
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[i]) * width, width, o.data() + i * width);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return tape_of(table).record(std::move(out), {table}, [idx = std::move(idx), width](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gt = ctx.grad_in(0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[i * width + j];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    same_tape("concat", parts[0], p);
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) shape_fail("concat", "trailing dims must match", parts[0].shape(), p.shape());
    rows += p.shape()[0];
    sizes.push_back(p.value().numel());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  auto o = out.mutable_data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().ptr(), p.value().numel(), o.data() + off);
    off += p.value().numel();
  }
  return tape_of(parts[0]).record(std::move(out), parts, [sizes = std::move(sizes)](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (ctx.needs(k)) {
        auto gi = ctx.grad_in(k);
        for (std::size_t i = 0; i < sizes[k]; ++i) gi[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice(const Var& a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  if (begin >= end || end > av.dim(0)) {
    throw ShapeError(fmt::format("slice: range [{}, {}) invalid for shape {}", begin, end, shape_str(av.shape())));
  }
  const auto row = av.numel() / av.dim(0);
  Shape shape = av.shape();
  shape[0] = end - begin;
  std::vector<double> data(av.ptr() + begin * row, av.ptr() + end * row);
  const auto off = begin * row;
  return tape_of(a).record(Tensor(shape, std::move(data)), {a}, [off](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a}, [](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var transpose12(const Var& a) {
  const auto& av = a.value();
  if (av.rank() != 4) throw ShapeError(fmt::format("transpose12: expected rank 4, got {}", shape_str(av.shape())));
  const auto d0 = av.dim(0), d1 = av.dim(1), d2 = av.dim(2), d3 = av.dim(3);
  Tensor out({d0, d2, d1, d3});
  auto o = out.mutable_data();
  const double* x = av.ptr();
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      for (std::size_t k = 0; k < d2; ++k)
        std::copy_n(x + ((i * d1 + j) * d2 + k) * d3, d3, o.data() + ((i * d2 + k) * d1 + j) * d3);
  return tape_of(a).record(std::move(out), {a}, [d0, d1, d2, d3](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < d0; ++i)
      for (std::size_t j = 0; j < d1; ++j)
        for (std::size_t k = 0; k < d2; ++k) {
          const double* src = g.data() + ((i * d2 + k) * d1 + j) * d3;
          double* dst = ga.data() + ((i * d1 + j) * d2 + k) * d3;
          for (std::size_t l = 0; l < d3; ++l) dst[l] += src[l];
        }
  });
}

Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument(fmt::format("dropout: rate {} not in [0, 1)", rate));
  if (rate == 0.0) return a;
  const auto& av = a.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> m(av.numel());
  for (auto& x : m) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    x = u >= rate ? keep_scale : 0.0;
  }
  Tensor out(av.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * m[i];
  return tape_of(a).record(std::move(out), {a}, [m = std::move(m)](BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
  });
}

Var cross_entropy_masked(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) {
    throw ShapeError(fmt::format("cross_entropy_masked: logits must be [T, V], got {}", shape_str(lv.shape())));
  }
  const auto rows = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw ShapeError(fmt::format("cross_entropy_masked: logits {} vs {} targets and {} mask entries",
                                 shape_str(lv.shape()), targets.size(), mask.size()));
  }
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("cross_entropy_masked: empty loss mask");

  std::vector<double> probs(rows * vocab, 0.0);
  double total = 0.0;
  const double* x = lv.ptr();
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw std::out_of_range(fmt::format("cross_entropy_masked: target {} at position {} outside vocab {}",
                                          targets[t], t, vocab));
    }
    const double* row = x + t * vocab;
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[t * vocab + j] = std::exp(row[j] - mx);
      z += probs[t * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= z;
    total += std::log(z) + mx - row[targets[t]];
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return tape_of(logits).record(
      Tensor::scalar(total * inv), {logits},
      [probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), rows, vocab, inv](BackwardContext& ctx) {
        const double g = ctx.grad_out()[0] * inv;
        auto gl = ctx.grad_in(0);
        for (std::size_t t = 0; t < rows; ++t) {
          if (!mk[t]) continue;
          for (std::size_t j = 0; j < vocab; ++j) gl[t * vocab + j] += g * probs[t * vocab + j];
          gl[t * vocab + static_cast<std::size_t>(tg[t])] -= g;
        }
      });
}

}  // namespace udmt::ops
