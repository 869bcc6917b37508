#pragma once

// Dense tensors and a reverse-mode differentiation tape.
//
// A Tensor is an immutable shaped buffer. When it is produced by an operation
// whose inputs live on a Tape, it carries a handle to the tape node that
// produced it; otherwise it is a constant and never receives gradient.
// Broadcasting is deliberately limited to rank-0 scalars; every other shape
// combination has its own named operation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saml {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kMatmul,
  kBatchMatmul,
  kTranspose,
  kAddBias,
  kAddBroadcastRows,
  kConcat,
  kSlice,
  kReshape,
  kStack,
  kSoftmax,
  kLogSoftmax,
  kLogSumExp,
  kSum,
  kLookup,
  kGatherLast,
  kGatherTargets,
  kMaskedFill,
  kLayerNorm,
  kStraightThrough,
};

const char* op_name(OpKind kind);

template <typename Real>
class Tape;

template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  /// Rank-0 zero.
  Tensor();
  Tensor(Shape shape, std::vector<Real> values);

  /// Wraps an existing buffer without copying.
  static Tensor from_shared(Shape shape, std::shared_ptr<std::vector<Real>> values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, Real value);
  static Tensor scalar(Real value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const Real> values() const noexcept { return *data_; }
  Real operator[](std::size_t i) const { return (*data_)[i]; }
  Real item() const;

  /// Writable view of the buffer; copies first when the buffer is shared.
  /// Only constants may be written.
  std::span<Real> mutable_values();

  bool on_tape() const noexcept { return tape_ != nullptr; }
  Tape<Real>* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }

  /// Same values, cut off from the tape.
  Tensor detach() const;

 private:
  friend class Tape<Real>;

  Shape shape_;
  std::shared_ptr<std::vector<Real>> data_;
  Tape<Real>* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

template <typename Real>
class Gradients;

template <typename Real>
class Tape {
 public:
  /// Receives the gradient flowing into an operation's output and one
  /// writable gradient buffer per input (empty when the input is constant).
  /// Implementations accumulate into the input buffers.
  using Backward =
      std::function<void(std::span<const Real> grad_out, std::span<const std::span<Real>> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient will be reported by backward().
  Tensor<Real> watch(const Tensor<Real>& value);

  Tensor<Real> record(OpKind kind, Shape shape, std::shared_ptr<std::vector<Real>> values,
                      const std::vector<const Tensor<Real>*>& inputs, Backward backward);

  Gradients<Real> backward(const Tensor<Real>& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    OpKind kind;
    std::size_t numel;
    std::vector<NodeId> inputs;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

template <typename Real>
class Gradients {
 public:
  /// Gradient of the loss with respect to `t`; zeros when `t` is a constant,
  /// belongs to another tape, or is unreachable from the loss.
  Tensor<Real> of(const Tensor<Real>& t) const;
  bool reached(const Tensor<Real>& t) const;

 private:
  friend class Tape<Real>;

  const Tape<Real>* tape_ = nullptr;
  std::vector<std::vector<Real>> grads_;
};

// ---------------------------------------------------------------------------
// Operations. Each returns a constant when no input is on a tape.

template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> neg(const Tensor<Real>& x);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& x, Real factor);
template <typename Real> Tensor<Real> exp(const Tensor<Real>& x);
/// Throws DomainError on any non-positive entry.
template <typename Real> Tensor<Real> log(const Tensor<Real>& x);
template <typename Real> Tensor<Real> tanh(const Tensor<Real>& x);
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& x);

/// [m×k]·[k×n].
template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
/// [B×m×k]·[B×k×n], independently per leading index.
template <typename Real> Tensor<Real> batch_matmul(const Tensor<Real>& a, const Tensor<Real>& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename Real> Tensor<Real> transpose(const Tensor<Real>& x);

/// x[..., n] + bias[n] on every row.
template <typename Real> Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);
/// x[B×S×n] + rows[B×n], adding rows[b] at every position s.
template <typename Real>
Tensor<Real> add_broadcast_rows(const Tensor<Real>& x, const Tensor<Real>& rows);

/// Concatenates along the last axis; leading shapes must agree.
template <typename Real> Tensor<Real> concat(const std::vector<Tensor<Real>>& parts);
/// Columns [begin, begin + count) of the last axis.
template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& x, std::size_t begin, std::size_t count);
template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
/// Stacks equally shaped tensors into a new axis inserted at `axis`.
template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& parts, std::size_t axis);

template <typename Real> Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis);
template <typename Real> Tensor<Real> log_softmax(const Tensor<Real>& x, std::size_t axis);
/// Reduces `axis`.
template <typename Real> Tensor<Real> logsumexp(const Tensor<Real>& x, std::size_t axis);
/// Sum of all entries, rank 0.
template <typename Real> Tensor<Real> sum(const Tensor<Real>& x);
/// Reduces `axis`.
template <typename Real> Tensor<Real> sum(const Tensor<Real>& x, std::size_t axis);

/// Rows of table[V×d] for each id; result is [ids.size()×d].
template <typename Real>
Tensor<Real> lookup(const Tensor<Real>& table, std::span<const std::int32_t> ids);
/// out[i] = x[i, ids[i]] over the flattened leading axes of x[..., V].
template <typename Real>
Tensor<Real> gather_last(const Tensor<Real>& x, std::span<const std::int32_t> ids);
/// out[b,t,j] = x[b,j,targets[b,t]] for x[B×J×V] and targets[B×T].
template <typename Real>
Tensor<Real> gather_targets(const Tensor<Real>& x, std::span<const std::int32_t> targets,
                            std::size_t target_len);

/// Entries with mask != 0 are replaced by `value` and receive no gradient.
template <typename Real>
Tensor<Real> masked_fill(const Tensor<Real>& x, std::span<const std::uint8_t> mask, Real value);

/// Normalizes each row of the last axis, then applies gain and bias.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real(1e-5));

/// Forward value is `hard`; the backward pass routes the incoming gradient to
/// `relaxed` unchanged.
template <typename Real>
Tensor<Real> straight_through(const Tensor<Real>& hard, const Tensor<Real>& relaxed);

}  // namespace saml
