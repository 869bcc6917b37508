#include "saml/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

namespace saml {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kNeg: return "neg";
    case OpKind::kScale: return "scale";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kBatchMatmul: return "batch_matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAddBroadcastRows: return "add_broadcast_rows";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kStack: return "stack";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLogSumExp: return "logsumexp";
    case OpKind::kSum: return "sum";
    case OpKind::kLookup: return "lookup";
    case OpKind::kGatherLast: return "gather_last";
    case OpKind::kGatherTargets: return "gather_targets";
    case OpKind::kMaskedFill: return "masked_fill";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kStraightThrough: return "straight_through";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

template <typename Real>
Tensor<Real>::Tensor() : data_(std::make_shared<std::vector<Real>>(1, Real(0))) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<Real>>(std::move(values))) {
  if (numel(shape_) != data_->size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_->size()));
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_shared(Shape shape, std::shared_ptr<std::vector<Real>> values) {
  if (!values || numel(shape) != values->size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " does not match its buffer");
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(values);
  return out;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape) {
  return filled(std::move(shape), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::filled(Shape shape, Real value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
  return Tensor(Shape{}, std::vector<Real>{value});
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape_));
  }
  return shape_[axis];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (data_->size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  }
  return data_->front();
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_values() {
  if (tape_ != nullptr) {
    throw std::logic_error("cannot write to a tensor recorded on a tape");
  }
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<Real>>(*data_);
  }
  return *data_;
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

// ---------------------------------------------------------------------------
// Tape

template <typename Real>
Tensor<Real> Tape<Real>::watch(const Tensor<Real>& value) {
  const NodeId id = nodes_.size();
  nodes_.push_back(Node{OpKind::kLeaf, value.size(), {}, nullptr});
  Tensor<Real> out = value.detach();
  out.tape_ = this;
  out.node_ = id;
  return out;
}

template <typename Real>
Tensor<Real> Tape<Real>::record(OpKind kind, Shape shape, std::shared_ptr<std::vector<Real>> values,
                                const std::vector<const Tensor<Real>*>& inputs,
                                Backward backward) {
  Tensor<Real> out = Tensor<Real>::from_shared(std::move(shape), std::move(values));
  Node node{kind, out.size(), {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Tensor<Real>* in : inputs) {
    if (in->tape_ != nullptr && in->tape_ != this) {
      throw std::logic_error(std::string("operation ") + op_name(kind) +
                             " mixes tensors from different tapes");
    }
    node.inputs.push_back(in->tape_ == this ? in->node_ : kNoNode);
  }
  const NodeId id = nodes_.size();
  nodes_.push_back(std::move(node));
  out.tape_ = this;
  out.node_ = id;
  return out;
}

template <typename Real>
Gradients<Real> Tape<Real>::backward(const Tensor<Real>& loss) const {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  Gradients<Real> result;
  result.tape_ = this;
  result.grads_.resize(nodes_.size());
  if (loss.tape() != this) return result;

  result.grads_[loss.node()].assign(1, Real(1));
  std::vector<std::span<Real>> in_spans;
  for (NodeId id = loss.node() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (result.grads_[id].empty() || !node.backward) continue;
    in_spans.assign(node.inputs.size(), std::span<Real>());
    bool any = false;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const NodeId in = node.inputs[k];
      if (in == kNoNode) continue;
      auto& buf = result.grads_[in];
      if (buf.empty()) buf.assign(nodes_[in].numel, Real(0));
      in_spans[k] = buf;
      any = true;
    }
    if (any) node.backward(result.grads_[id], in_spans);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradients

template <typename Real>
bool Gradients<Real>::reached(const Tensor<Real>& t) const {
  return t.tape() == tape_ && t.tape() != nullptr && !grads_[t.node()].empty();
}

template <typename Real>
Tensor<Real> Gradients<Real>::of(const Tensor<Real>& t) const {
  if (!reached(t)) return Tensor<Real>::zeros(t.shape());
  return Tensor<Real>(t.shape(), grads_[t.node()]);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace saml
