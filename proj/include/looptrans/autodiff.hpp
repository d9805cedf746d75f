#pragma once

// Reverse-mode differentiation over a fixed set of dense tensor ops.
//
// A Tape records every op executed on its Vars in creation order, which is
// also a topological order. backward() replays it once in reverse; a second
// call without a new tape is rejected.

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var leaf(Tensor t);

  void backward(const Var& loss);
  bool backward_done() const { return backward_done_; }

  /// Gradient accumulated at `v` by backward(); zeros if none reached it.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

  const std::vector<std::string>& warnings() const { return warnings_; }
  void warn(std::string msg) { warnings_.push_back(std::move(msg)); }

  // Op-construction interface.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of node `id`, allocated on first use.
  std::vector<double>& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::vector<std::string> warnings_;
  bool backward_done_ = false;
};

namespace ops {

// Elementwise. Either operand may be a single-element tensor, which is
// broadcast against the other.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var log(const Var& x);
Var exp(const Var& x);
/// log(sigmoid(x)) evaluated without overflow.
Var log_sigmoid(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape s);
/// Copy of the value with no gradient path.
Var detach(const Var& x);

/// [m×k]·[k×n]
Var matmul(const Var& a, const Var& b);
/// 3×3 convolution, stride 1, zero padding 1. x [H×W×Ci], w [3×3×Ci×Co], bias [Co].
Var conv3x3(const Var& x, const Var& w, const Var& bias);
/// Per-pixel linear map. x [H×W×Ci], w [Ci×Co]; bias [Co] optional.
Var conv1x1(const Var& x, const Var& w, const Var* bias = nullptr);

/// Channel c of an H×W×K map as H×W.
Var channel(const Var& x, std::size_t c);
/// Channels [first, first+count) of an H×W×K map.
Var channels(const Var& x, std::size_t first, std::size_t count);
/// Element i of a vector as a 1-element tensor.
Var element(const Var& x, std::size_t i);
/// Concatenates single-element tensors into a vector.
Var stack(const std::vector<Var>& scalars);

/// (x − min) / (max − min + eps) over an H×W map. Min and max are treated as
/// functions of their first achieving element in row-major order.
Var minmax_normalize(const Var& x, double eps = 1e-8);
/// Global average pooling: H×W → scalar, H×W×K → [K].
Var gap(const Var& x);
/// map [H×W] ∘ features [H×W×C], the map broadcast over channels.
Var hadamard(const Var& map, const Var& features);
/// a·b / max(‖a‖‖b‖, eps). Two zero vectors give 0 and a tape warning.
Var cosine_sim(const Var& a, const Var& b, double eps = 1e-8);
/// x / max(‖x‖, eps)
Var l2_normalize(const Var& x, double eps = 1e-8);
/// log Σ exp(x_i), max-shifted.
Var logsumexp(const Var& x);

}  // namespace ops
}  // namespace looptrans
