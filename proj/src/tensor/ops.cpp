#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "saml/tensor.hpp"

namespace saml {
namespace {

template <typename Real>
using Buffer = std::shared_ptr<std::vector<Real>>;

template <typename Real>
using Backward = typename Tape<Real>::Backward;

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using MatrixMap = Eigen::Map<RowMatrix<Real>>;

template <typename Real>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;

template <typename Real>
Buffer<Real> buffer(std::size_t n) {
  return std::make_shared<std::vector<Real>>(n);
}

// Records the result when any input lives on a tape, else returns a constant.
// `make_backward` is only invoked in the former case.
template <typename Real, typename MakeBackward>
Tensor<Real> emit(OpKind kind, Shape shape, Buffer<Real> out,
                  const std::vector<const Tensor<Real>*>& inputs, MakeBackward&& make_backward) {
  Tape<Real>* tape = nullptr;
  for (const Tensor<Real>* in : inputs) {
    if (in->tape() == nullptr) continue;
    if (tape != nullptr && tape != in->tape()) {
      throw std::logic_error(std::string("operation ") + op_name(kind) +
                             " mixes tensors from different tapes");
    }
    tape = in->tape();
  }
  if (tape == nullptr) return Tensor<Real>::from_shared(std::move(shape), std::move(out));
  return tape->record(kind, std::move(shape), std::move(out), inputs, make_backward());
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

std::string describe(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), std::string(op) + ": axis " + std::to_string(axis) +
                                   " invalid for shape " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Real>
Tensor<Real> binary(OpKind kind, const Tensor<Real>& a, const Tensor<Real>& b) {
  const bool a_scalar = a.rank() == 0;
  const bool b_scalar = b.rank() == 0;
  require(a.shape() == b.shape() || a_scalar || b_scalar, describe(op_name(kind), a.shape(), b.shape()));
  Shape shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  auto out = buffer<Real>(n);
  auto av = a.values();
  auto bv = b.values();
  auto& o = *out;
  switch (kind) {
    case OpKind::kAdd:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i * sa] + bv[i * sb];
      break;
    case OpKind::kSub:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i * sa] - bv[i * sb];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i * sa] * bv[i * sb];
      break;
  }
  return emit<Real>(kind, std::move(shape), out, {&a, &b}, [&]() -> Backward<Real> {
    return [kind, n, sa, sb, a = a.detach(), b = b.detach()](std::span<const Real> g,
                                                              std::span<const std::span<Real>> gi) {
      auto av = a.values();
      auto bv = b.values();
      if (!gi[0].empty()) {
        auto ga = gi[0];
        if (kind == OpKind::kMul) {
          for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * bv[i * sb];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i];
        }
      }
      if (!gi[1].empty()) {
        auto gb = gi[1];
        if (kind == OpKind::kMul) {
          for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * av[i * sa];
        } else if (kind == OpKind::kSub) {
          for (std::size_t i = 0; i < n; ++i) gb[i * sb] -= g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i];
        }
      }
    };
  });
}

// `derivative(x, y)` gives dy/dx from the input and output values.
template <typename Real, typename Fn, typename Derivative>
Tensor<Real> unary(OpKind kind, const Tensor<Real>& x, Fn fn, Derivative derivative) {
  const std::size_t n = x.size();
  auto out = buffer<Real>(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = fn(xv[i]);
  return emit<Real>(kind, x.shape(), out, {&x}, [&]() -> Backward<Real> {
    return [x = x.detach(), out, derivative](std::span<const Real> g,
                                             std::span<const std::span<Real>> gi) {
      auto xv = x.values();
      const auto& y = *out;
      auto gx = gi[0];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], y[i]);
    };
  });
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(OpKind::kAdd, a, b);
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(OpKind::kSub, a, b);
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(OpKind::kMul, a, b);
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  return unary(OpKind::kNeg, x, [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  return unary(OpKind::kScale, x, [factor](Real v) { return v * factor; },
               [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  return unary(OpKind::kExp, x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > Real(0))) {
      throw DomainError("log of non-positive value " + std::to_string(xv[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(OpKind::kLog, x, [](Real v) { return std::log(v); },
               [](Real v, Real) { return Real(1) / v; });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return unary(OpKind::kTanh, x, [](Real v) { return std::tanh(v); },
               [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return unary(OpKind::kSigmoid, x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
               [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          describe("matmul", a.shape(), b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  auto out = buffer<Real>(static_cast<std::size_t>(m * n));
  MatrixMap<Real>(out->data(), m, n).noalias() =
      ConstMatrixMap<Real>(a.values().data(), m, k) * ConstMatrixMap<Real>(b.values().data(), k, n);
  return emit<Real>(OpKind::kMatmul, Shape{a.dim(0), b.dim(1)}, out, {&a, &b},
                    [&]() -> Backward<Real> {
                      return [m, k, n, a = a.detach(), b = b.detach()](
                                 std::span<const Real> g, std::span<const std::span<Real>> gi) {
                        ConstMatrixMap<Real> dc(g.data(), m, n);
                        if (!gi[0].empty()) {
                          MatrixMap<Real>(gi[0].data(), m, k).noalias() +=
                              dc * ConstMatrixMap<Real>(b.values().data(), k, n).transpose();
                        }
                        if (!gi[1].empty()) {
                          MatrixMap<Real>(gi[1].data(), k, n).noalias() +=
                              ConstMatrixMap<Real>(a.values().data(), m, k).transpose() * dc;
                        }
                      };
                    });
}

template <typename Real>
Tensor<Real> batch_matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          describe("batch_matmul", a.shape(), b.shape()));
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(b.dim(2));
  const std::size_t sa = a.dim(1) * a.dim(2);
  const std::size_t sb = b.dim(1) * b.dim(2);
  const std::size_t sc = a.dim(1) * b.dim(2);
  auto out = buffer<Real>(batch * sc);
  for (std::size_t i = 0; i < batch; ++i) {
    MatrixMap<Real>(out->data() + i * sc, m, n).noalias() =
        ConstMatrixMap<Real>(a.values().data() + i * sa, m, k) *
        ConstMatrixMap<Real>(b.values().data() + i * sb, k, n);
  }
  return emit<Real>(
      OpKind::kBatchMatmul, Shape{batch, a.dim(1), b.dim(2)}, out, {&a, &b},
      [&]() -> Backward<Real> {
        return [=, a = a.detach(), b = b.detach()](std::span<const Real> g,
                                                    std::span<const std::span<Real>> gi) {
          for (std::size_t i = 0; i < batch; ++i) {
            ConstMatrixMap<Real> dc(g.data() + i * sc, m, n);
            if (!gi[0].empty()) {
              MatrixMap<Real>(gi[0].data() + i * sa, m, k).noalias() +=
                  dc * ConstMatrixMap<Real>(b.values().data() + i * sb, k, n).transpose();
            }
            if (!gi[1].empty()) {
              MatrixMap<Real>(gi[1].data() + i * sb, k, n).noalias() +=
                  ConstMatrixMap<Real>(a.values().data() + i * sa, m, k).transpose() * dc;
            }
          }
        };
      });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  require(x.rank() == 2 || x.rank() == 3,
          "transpose: expected rank 2 or 3, got shape " + to_string(x.shape()));
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.dim(x.rank() - 2);
  const std::size_t cols = x.dim(x.rank() - 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) (*out)[base + c * rows + r] = xv[base + r * cols + c];
    }
  }
  return emit<Real>(OpKind::kTranspose, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [batch, rows, cols](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * rows * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gi[0][base + r * cols + c] += g[base + c * rows + r];
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && x.shape().back() == bias.dim(0),
          describe("add_bias", x.shape(), bias.shape()));
  const std::size_t n = bias.dim(0);
  const std::size_t rows = x.size() / std::max<std::size_t>(n, 1);
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) (*out)[r * n + c] = xv[r * n + c] + bv[c];
  }
  return emit<Real>(OpKind::kAddBias, x.shape(), out, {&x, &bias}, [&]() -> Backward<Real> {
    return [rows, n](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      if (!gi[0].empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
      }
      if (!gi[1].empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < n; ++c) gi[1][c] += g[r * n + c];
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> add_broadcast_rows(const Tensor<Real>& x, const Tensor<Real>& rows) {
  require(x.rank() == 3 && rows.rank() == 2 && x.dim(0) == rows.dim(0) && x.dim(2) == rows.dim(1),
          describe("add_broadcast_rows", x.shape(), rows.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t positions = x.dim(1);
  const std::size_t n = x.dim(2);
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  auto rv = rows.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < positions; ++s) {
      const std::size_t base = (b * positions + s) * n;
      for (std::size_t c = 0; c < n; ++c) (*out)[base + c] = xv[base + c] + rv[b * n + c];
    }
  }
  return emit<Real>(OpKind::kAddBroadcastRows, x.shape(), out, {&x, &rows},
                    [&]() -> Backward<Real> {
                      return [batch, positions, n](std::span<const Real> g,
                                                   std::span<const std::span<Real>> gi) {
                        if (!gi[0].empty()) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                        }
                        if (!gi[1].empty()) {
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t s = 0; s < positions; ++s) {
                              const std::size_t base = (b * positions + s) * n;
                              for (std::size_t c = 0; c < n; ++c) gi[1][b * n + c] += g[base + c];
                            }
                          }
                        }
                      };
                    });
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(!first.empty(), "concat: rank-0 input");
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<const Tensor<Real>*> inputs;
  for (const auto& p : parts) {
    require(p.rank() == first.size() && Shape(p.shape().begin(), p.shape().end() - 1) == lead,
            describe("concat", first, p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
    inputs.push_back(&p);
  }
  const std::size_t rows = numel(lead);
  auto out = buffer<Real>(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + r * widths[k], widths[k], out->begin() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return emit<Real>(OpKind::kConcat, std::move(shape), out, inputs, [&]() -> Backward<Real> {
    return [rows, total, widths](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (!gi[k].empty()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < widths[k]; ++c) {
              gi[k][r * widths[k] + c] += g[r * total + offset + c];
            }
          }
        }
        offset += widths[k];
      }
    };
  });
}

template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& x, std::size_t begin, std::size_t count) {
  require(x.rank() >= 1 && begin + count <= x.shape().back(),
          "slice_last: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside shape " + to_string(x.shape()));
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(width, 1);
  auto out = buffer<Real>(rows * count);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + r * width + begin, count, out->begin() + r * count);
  }
  Shape shape = x.shape();
  shape.back() = count;
  return emit<Real>(OpKind::kSlice, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [rows, width, begin, count](std::span<const Real> g,
                                       std::span<const std::span<Real>> gi) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) gi[0][r * width + begin + c] += g[r * count + c];
      }
    };
  });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  require(numel(shape) == x.size(), describe("reshape", x.shape(), shape));
  auto out = std::make_shared<std::vector<Real>>(x.values().begin(), x.values().end());
  return emit<Real>(OpKind::kReshape, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
    };
  });
}

template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  require(!parts.empty(), "stack: no inputs");
  const Shape& part_shape = parts.front().shape();
  require(axis <= part_shape.size(), "stack: axis " + std::to_string(axis) +
                                         " invalid for parts of shape " + to_string(part_shape));
  std::vector<const Tensor<Real>*> inputs;
  for (const auto& p : parts) {
    require(p.shape() == part_shape, describe("stack", part_shape, p.shape()));
    inputs.push_back(&p);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= part_shape[i];
  const std::size_t inner = numel(part_shape) / std::max<std::size_t>(outer, 1);
  const std::size_t count = parts.size();
  auto out = buffer<Real>(outer * count * inner);
  for (std::size_t k = 0; k < count; ++k) {
    auto v = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * inner, inner, out->begin() + (o * count + k) * inner);
    }
  }
  Shape shape = part_shape;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  return emit<Real>(OpKind::kStack, std::move(shape), out, inputs, [&]() -> Backward<Real> {
    return [outer, count, inner](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t k = 0; k < count; ++k) {
        if (gi[k].empty()) continue;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gi[k][o * inner + i] += g[(o * count + k) * inner + i];
        }
      }
    };
  });
}

namespace {

// Stable log-sum-exp of `len` values spaced `stride` apart.
template <typename Real>
Real strided_lse(const Real* x, std::size_t len, std::size_t stride) {
  Real peak = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < len; ++i) peak = std::max(peak, x[i * stride]);
  if (!std::isfinite(peak)) return peak;
  Real acc = 0;
  for (std::size_t i = 0; i < len; ++i) acc += std::exp(x[i * stride] - peak);
  return peak + std::log(acc);
}

}  // namespace

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      Real peak = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) peak = std::max(peak, xv[base + j * s.inner]);
      Real total = 0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const Real e = std::exp(xv[base + j * s.inner] - peak);
        (*out)[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) (*out)[base + j * s.inner] /= total;
    }
  }
  return emit<Real>(OpKind::kSoftmax, x.shape(), out, {&x}, [&]() -> Backward<Real> {
    return [s, out](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      const auto& y = *out;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          Real dot = 0;
          for (std::size_t j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            gi[0][p] += y[p] * (g[p] - dot);
          }
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      const Real lse = strided_lse(xv.data() + base, s.len, s.inner);
      for (std::size_t j = 0; j < s.len; ++j) {
        (*out)[base + j * s.inner] = xv[base + j * s.inner] - lse;
      }
    }
  }
  return emit<Real>(OpKind::kLogSoftmax, x.shape(), out, {&x}, [&]() -> Backward<Real> {
    return [s, out](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      const auto& y = *out;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          Real total = 0;
          for (std::size_t j = 0; j < s.len; ++j) total += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            gi[0][p] += g[p] - std::exp(y[p]) * total;
          }
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> logsumexp(const Tensor<Real>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "logsumexp");
  auto out = buffer<Real>(s.outer * s.inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      (*out)[o * s.inner + i] = strided_lse(xv.data() + o * s.len * s.inner + i, s.len, s.inner);
    }
  }
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return emit<Real>(OpKind::kLogSumExp, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [s, out, x = x.detach()](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      auto xv = x.values();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const Real lse = (*out)[o * s.inner + i];
          const Real go = g[o * s.inner + i];
          const std::size_t base = o * s.len * s.inner + i;
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t p = base + j * s.inner;
            gi[0][p] += go * std::exp(xv[p] - lse);
          }
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real total = 0;
  for (Real v : x.values()) total += v;
  auto out = std::make_shared<std::vector<Real>>(1, total);
  return emit<Real>(OpKind::kSum, Shape{}, out, {&x}, [&]() -> Backward<Real> {
    return [](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (Real& v : gi[0]) v += g[0];
    };
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum");
  auto out = buffer<Real>(s.outer * s.inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        (*out)[o * s.inner + i] += xv[(o * s.len + j) * s.inner + i];
      }
    }
  }
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return emit<Real>(OpKind::kSum, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [s](std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.len; ++j) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            gi[0][(o * s.len + j) * s.inner + i] += g[o * s.inner + i];
          }
        }
      }
    };
  });
}

template <typename Real>
Tensor<Real> lookup(const Tensor<Real>& table, std::span<const std::int32_t> ids) {
  require(table.rank() == 2, "lookup: table must be rank 2, got " + to_string(table.shape()));
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw std::out_of_range("lookup: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside table of " + std::to_string(rows) +
                              " rows");
    }
  }
  auto out = buffer<Real>(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::size_t>(ids[i]) * d, d, out->begin() + i * d);
  }
  return emit<Real>(OpKind::kLookup, Shape{ids.size(), d}, out, {&table}, [&]() -> Backward<Real> {
    return [d, ids = std::vector<std::int32_t>(ids.begin(), ids.end())](
               std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Real* row = gi[0].data() + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += g[i * d + c];
      }
    };
  });
}

template <typename Real>
Tensor<Real> gather_last(const Tensor<Real>& x, std::span<const std::int32_t> ids) {
  require(x.rank() >= 1, "gather_last: rank-0 input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(width, 1);
  require(ids.size() == rows, "gather_last: " + std::to_string(ids.size()) + " ids for " +
                                  std::to_string(rows) + " rows of " + to_string(x.shape()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= width) {
      throw std::out_of_range("gather_last: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside width " + std::to_string(width));
    }
  }
  auto out = buffer<Real>(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) (*out)[r] = xv[r * width + static_cast<std::size_t>(ids[r])];
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  return emit<Real>(OpKind::kGatherLast, std::move(shape), out, {&x}, [&]() -> Backward<Real> {
    return [width, ids = std::vector<std::int32_t>(ids.begin(), ids.end())](
               std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t r = 0; r < ids.size(); ++r) {
        gi[0][r * width + static_cast<std::size_t>(ids[r])] += g[r];
      }
    };
  });
}

template <typename Real>
Tensor<Real> gather_targets(const Tensor<Real>& x, std::span<const std::int32_t> targets,
                            std::size_t target_len) {
  require(x.rank() == 3, "gather_targets: expected [B×J×V], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t width = x.dim(2);
  require(targets.size() == batch * target_len,
          "gather_targets: " + std::to_string(targets.size()) + " targets for batch " +
              std::to_string(batch) + " of length " + std::to_string(target_len));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= width) {
      throw std::out_of_range("gather_targets: id " + std::to_string(targets[i]) +
                              " at position " + std::to_string(i) + " outside width " +
                              std::to_string(width));
    }
  }
  auto out = buffer<Real>(batch * target_len * steps);
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < target_len; ++t) {
      const auto y = static_cast<std::size_t>(targets[b * target_len + t]);
      for (std::size_t j = 0; j < steps; ++j) {
        (*out)[(b * target_len + t) * steps + j] = xv[(b * steps + j) * width + y];
      }
    }
  }
  return emit<Real>(
      OpKind::kGatherTargets, Shape{batch, target_len, steps}, out, {&x}, [&]() -> Backward<Real> {
        return [batch, steps, width, target_len,
                targets = std::vector<std::int32_t>(targets.begin(), targets.end())](
                   std::span<const Real> g, std::span<const std::span<Real>> gi) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < target_len; ++t) {
              const auto y = static_cast<std::size_t>(targets[b * target_len + t]);
              for (std::size_t j = 0; j < steps; ++j) {
                gi[0][(b * steps + j) * width + y] += g[(b * target_len + t) * steps + j];
              }
            }
          }
        };
      });
}

template <typename Real>
Tensor<Real> masked_fill(const Tensor<Real>& x, std::span<const std::uint8_t> mask, Real value) {
  require(mask.size() == x.size(), "masked_fill: mask of " + std::to_string(mask.size()) +
                                       " entries for shape " + to_string(x.shape()));
  auto out = buffer<Real>(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < x.size(); ++i) (*out)[i] = mask[i] ? value : xv[i];
  return emit<Real>(OpKind::kMaskedFill, x.shape(), out, {&x}, [&]() -> Backward<Real> {
    return [m = std::vector<std::uint8_t>(mask.begin(), mask.end())](
               std::span<const Real> g, std::span<const std::span<Real>> gi) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!m[i]) gi[0][i] += g[i];
      }
    };
  });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps) {
  require(x.rank() >= 1 && gain.rank() == 1 && bias.rank() == 1 &&
              gain.dim(0) == x.shape().back() && bias.dim(0) == x.shape().back(),
          describe("layer_norm", x.shape(), gain.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(n, 1);
  auto out = buffer<Real>(x.size());
  auto normalized = std::make_shared<std::vector<Real>>(x.size());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data() + r * n;
    Real mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<Real>(n);
    const Real inv = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const Real xhat = (row[c] - mean) * inv;
      (*normalized)[r * n + c] = xhat;
      (*out)[r * n + c] = gv[c] * xhat + bv[c];
    }
  }
  return emit<Real>(
      OpKind::kLayerNorm, x.shape(), out, {&x, &gain, &bias}, [&]() -> Backward<Real> {
        return [rows, n, normalized, inv_std, gain = gain.detach()](
                   std::span<const Real> g, std::span<const std::span<Real>> gi) {
          const auto& xhat = *normalized;
          auto gv = gain.values();
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* go = g.data() + r * n;
            if (!gi[1].empty()) {
              for (std::size_t c = 0; c < n; ++c) gi[1][c] += go[c] * xhat[r * n + c];
            }
            if (!gi[2].empty()) {
              for (std::size_t c = 0; c < n; ++c) gi[2][c] += go[c];
            }
            if (!gi[0].empty()) {
              Real mean_g = 0;
              Real mean_gx = 0;
              for (std::size_t c = 0; c < n; ++c) {
                const Real gh = go[c] * gv[c];
                mean_g += gh;
                mean_gx += gh * xhat[r * n + c];
              }
              mean_g /= static_cast<Real>(n);
              mean_gx /= static_cast<Real>(n);
              for (std::size_t c = 0; c < n; ++c) {
                const Real gh = go[c] * gv[c];
                gi[0][r * n + c] += (*inv_std)[r] * (gh - mean_g - xhat[r * n + c] * mean_gx);
              }
            }
          }
        };
      });
}

template <typename Real>
Tensor<Real> straight_through(const Tensor<Real>& hard, const Tensor<Real>& relaxed) {
  require(hard.shape() == relaxed.shape(),
          describe("straight_through", hard.shape(), relaxed.shape()));
  auto out = std::make_shared<std::vector<Real>>(hard.values().begin(), hard.values().end());
  return emit<Real>(OpKind::kStraightThrough, hard.shape(), out, {&hard, &relaxed},
                    [&]() -> Backward<Real> {
                      return [](std::span<const Real> g, std::span<const std::span<Real>> gi) {
                        if (gi[1].empty()) return;
                        for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i];
                      };
                    });
}

#define SAML_INSTANTIATE_OPS(Real)                                                              \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> neg(const Tensor<Real>&);                                               \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                       \
  template Tensor<Real> exp(const Tensor<Real>&);                                               \
  template Tensor<Real> log(const Tensor<Real>&);                                               \
  template Tensor<Real> tanh(const Tensor<Real>&);                                              \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                           \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                       \
  template Tensor<Real> batch_matmul(const Tensor<Real>&, const Tensor<Real>&);                 \
  template Tensor<Real> transpose(const Tensor<Real>&);                                         \
  template Tensor<Real> add_bias(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> add_broadcast_rows(const Tensor<Real>&, const Tensor<Real>&);           \
  template Tensor<Real> concat(const std::vector<Tensor<Real>>&);                               \
  template Tensor<Real> slice_last(const Tensor<Real>&, std::size_t, std::size_t);              \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                    \
  template Tensor<Real> stack(const std::vector<Tensor<Real>>&, std::size_t);                   \
  template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                              \
  template Tensor<Real> log_softmax(const Tensor<Real>&, std::size_t);                          \
  template Tensor<Real> logsumexp(const Tensor<Real>&, std::size_t);                            \
  template Tensor<Real> sum(const Tensor<Real>&);                                               \
  template Tensor<Real> sum(const Tensor<Real>&, std::size_t);                                  \
  template Tensor<Real> lookup(const Tensor<Real>&, std::span<const std::int32_t>);             \
  template Tensor<Real> gather_last(const Tensor<Real>&, std::span<const std::int32_t>);        \
  template Tensor<Real> gather_targets(const Tensor<Real>&, std::span<const std::int32_t>,      \
                                       std::size_t);                                            \
  template Tensor<Real> masked_fill(const Tensor<Real>&, std::span<const std::uint8_t>, Real);  \
  template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                   Real);                                                       \
  template Tensor<Real> straight_through(const Tensor<Real>&, const Tensor<Real>&);

SAML_INSTANTIATE_OPS(float)
SAML_INSTANTIATE_OPS(double)

#undef SAML_INSTANTIATE_OPS

}  // namespace saml
