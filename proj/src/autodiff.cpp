#include "looptrans/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "looptrans/kernels.hpp"

namespace looptrans {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor t) { return record(std::move(t), {}, nullptr); }

Var Tape::leaf(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (backward_done_) throw ContractError("tape already consumed by backward(); start a new tape");
  bool rg = false;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw ContractError("op mixes Vars from different tapes");
    rg = rg || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(fn) : nullptr, rg});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("backward() on a Var from another tape");
  if (backward_done_) throw ContractError("second backward() on the same tape");
  if (!nodes_[loss.id_].value.is_scalar())
    throw ContractError("backward() needs a scalar loss, got " + shape_str(nodes_[loss.id_].value.shape()));
  backward_done_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const auto& n = nodes_.at(v.id_);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

namespace ops {
namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("use of an unbound Var");
  return *v.tape();
}

struct Broadcast {
  Shape shape;
  std::size_t n;
  bool a_scalar;
  bool b_scalar;
};

Broadcast broadcast(const Var& a, const Var& b, const char* op) {
  const auto& ta = a.value();
  const auto& tb = b.value();
  if (ta.shape() == tb.shape()) return {ta.shape(), ta.size(), false, false};
  if (ta.size() == 1) return {tb.shape(), tb.size(), true, false};
  if (tb.size() == 1) return {ta.shape(), ta.size(), false, true};
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(ta.shape()) + " and " +
                   shape_str(tb.shape()));
}

inline std::size_t idx(std::size_t i, bool scalar) { return scalar ? 0 : i; }

template <class Fwd, class Da, class Db>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, Da da, Db db) {
  auto& tape = tape_of(a);
  const auto bc = broadcast(a, b, name);
  const auto& ta = a.value();
  const auto& tb = b.value();
  Tensor out(bc.shape);
  for (std::size_t i = 0; i < bc.n; ++i) out[i] = fwd(ta[idx(i, bc.a_scalar)], tb[idx(i, bc.b_scalar)]);
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [aid, bid, bc, da, db](Tape& t, const std::vector<double>& g) {
    const auto& va = t.value(aid);
    const auto& vb = t.value(bid);
    if (t.requires_grad(aid)) {
      auto& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < bc.n; ++i)
        ga[idx(i, bc.a_scalar)] += g[i] * da(va[idx(i, bc.a_scalar)], vb[idx(i, bc.b_scalar)]);
    }
    if (t.requires_grad(bid)) {
      auto& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < bc.n; ++i)
        gb[idx(i, bc.b_scalar)] += g[i] * db(va[idx(i, bc.a_scalar)], vb[idx(i, bc.b_scalar)]);
    }
  });
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(const Var& a, double s) { return mul(a, tape_of(a).constant(Tensor::scalar(s))); }
Var add_scalar(const Var& a, double s) { return add(a, tape_of(a).constant(Tensor::scalar(s))); }
Var neg(const Var& a) { return scale(a, -1.0); }

namespace {

// Elementwise op whose derivative is a function of input and output.
template <class Fwd, class Deriv>
Var pointwise(const Var& x, Fwd fwd, Deriv deriv) {
  auto& tape = tape_of(x);
  const auto& tx = x.value();
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = fwd(tx[i]);
  const auto xid = x.id();
  auto saved = out;
  return tape.record(std::move(out), {x}, [xid, saved = std::move(saved), deriv](Tape& t, const std::vector<double>& g) {
    const auto& vx = t.value(xid);
    auto& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(vx[i], saved[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var relu(const Var& x) {
  return pointwise(
      // Written so that NaN passes through instead of being clipped to 0.
      x, [](double v) { return v < 0 ? 0.0 : v; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return pointwise(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& x) {
  return pointwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var exp(const Var& x) {
  return pointwise(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log_sigmoid(const Var& x) {
  return pointwise(
      x, [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid_scalar(-v); });
}

Var sum(const Var& x) {
  auto& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const auto xid = x.id();
  return tape.record(Tensor::scalar(s), {x}, [xid](Tape& t, const std::vector<double>& g) {
    auto& gx = t.grad_buffer(xid);
    for (double& v : gx) v += g[0];
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var reshape(const Var& x, Shape s) {
  auto& tape = tape_of(x);
  Tensor out = x.value().reshaped(std::move(s));
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [xid](Tape& t, const std::vector<double>& g) {
    auto& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var detach(const Var& x) { return tape_of(x).constant(x.value()); }

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  auto& tape = tape_of(a);
  Tensor out(Shape{m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [aid, bid, m, k, n](Tape& t, const std::vector<double>& g) {
    std::span<double> ga, gb;
    if (t.requires_grad(aid)) ga = t.grad_buffer(aid);
    if (t.requires_grad(bid)) gb = t.grad_buffer(bid);
    kernels::matmul_backward(t.value(aid).data(), t.value(bid).data(), g, ga, gb, m, k, n);
  });
}

Var conv3x3(const Var& x, const Var& w, const Var& bias) {
  require_rank(x, 3, "conv3x3");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.size() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[2])
    throw ShapeError("conv3x3: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  const kernels::ConvDims d{xs[0], xs[1], xs[2], ws[3]};
  if (bias.size() != d.out_channels) throw ShapeError("conv3x3: bias size mismatch");
  auto& tape = tape_of(x);
  Tensor out(Shape{d.height, d.width, d.out_channels});
  kernels::conv3x3(x.value().data(), w.value().data(), bias.value().data(), out.data(), d);
  const auto xid = x.id(), wid = w.id(), bid = bias.id();
  return tape.record(std::move(out), {x, w, bias}, [xid, wid, bid, d](Tape& t, const std::vector<double>& g) {
    std::span<double> gx, gw;
    if (t.requires_grad(xid)) gx = t.grad_buffer(xid);
    if (t.requires_grad(wid)) gw = t.grad_buffer(wid);
    if (!gx.empty() || !gw.empty())
      kernels::conv3x3_backward(t.value(xid).data(), t.value(wid).data(), g, gx, gw, d);
    if (t.requires_grad(bid)) {
      auto& gb = t.grad_buffer(bid);
      const std::size_t pixels = d.height * d.width;
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < d.out_channels; ++c) gb[c] += g[p * d.out_channels + c];
    }
  });
}

Var conv1x1(const Var& x, const Var& w, const Var* bias) {
  require_rank(x, 3, "conv1x1");
  require_rank(w, 2, "conv1x1");
  const auto& xs = x.shape();
  if (w.shape()[0] != xs[2])
    throw ShapeError("conv1x1: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(xs));
  const std::size_t co = w.shape()[1];
  auto y = matmul(reshape(x, Shape{xs[0] * xs[1], xs[2]}), w);
  if (bias) {
    if (bias->size() != co) throw ShapeError("conv1x1: bias size mismatch");
    auto& tape = tape_of(x);
    const std::size_t pixels = xs[0] * xs[1];
    Tensor out = y.value();
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < co; ++c) out[p * co + c] += bias->value()[c];
    const auto yid = y.id(), bid = bias->id();
    y = tape.record(std::move(out), {y, *bias}, [yid, bid, pixels, co](Tape& t, const std::vector<double>& g) {
      if (t.requires_grad(yid)) {
        auto& gy = t.grad_buffer(yid);
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
      }
      if (t.requires_grad(bid)) {
        auto& gb = t.grad_buffer(bid);
        for (std::size_t p = 0; p < pixels; ++p)
          for (std::size_t c = 0; c < co; ++c) gb[c] += g[p * co + c];
      }
    });
  }
  return reshape(y, Shape{xs[0], xs[1], co});
}

Var channels(const Var& x, std::size_t first, std::size_t count) {
  require_rank(x, 3, "channels");
  const auto& s = x.shape();
  if (first + count > s[2]) throw ShapeError("channels: range exceeds " + shape_str(s));
  const std::size_t pixels = s[0] * s[1], k = s[2];
  Tensor out(Shape{s[0], s[1], count});
  const auto& v = x.value();
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < count; ++c) out[p * count + c] = v[p * k + first + c];
  const auto xid = x.id();
  return tape_of(x).record(std::move(out), {x}, [xid, pixels, k, first, count](Tape& t, const std::vector<double>& g) {
    auto& gx = t.grad_buffer(xid);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < count; ++c) gx[p * k + first + c] += g[p * count + c];
  });
}

Var channel(const Var& x, std::size_t c) {
  auto sliced = channels(x, c, 1);
  return reshape(sliced, Shape{x.shape()[0], x.shape()[1]});
}

Var element(const Var& x, std::size_t i) {
  if (i >= x.size()) throw ShapeError("element: index out of range");
  const auto xid = x.id();
  return tape_of(x).record(Tensor::scalar(x.value()[i]), {x}, [xid, i](Tape& t, const std::vector<double>& g) {
    t.grad_buffer(xid)[i] += g[0];
  });
}

Var stack(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ShapeError("stack: no inputs");
  std::vector<double> vals;
  std::vector<std::size_t> ids;
  for (const auto& s : scalars) {
    vals.push_back(s.value().item());
    ids.push_back(s.id());
  }
  const std::size_t n = vals.size();
  return tape_of(scalars.front())
      .record(Tensor(Shape{n}, std::move(vals)), scalars, [ids](Tape& t, const std::vector<double>& g) {
        for (std::size_t i = 0; i < ids.size(); ++i)
          if (t.requires_grad(ids[i])) t.grad_buffer(ids[i])[0] += g[i];
      });
}

Var minmax_normalize(const Var& x, double eps) {
  require_rank(x, 2, "minmax_normalize");
  const auto& v = x.value();
  if (v.size() == 0) throw ShapeError("minmax_normalize: empty map");
  std::size_t imin = 0, imax = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[imin]) imin = i;
    if (v[i] > v[imax]) imax = i;
  }
  const double lo = v[imin];
  const double range = v[imax] - lo + eps;
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / range;
  auto saved = out;
  const auto xid = x.id();
  return tape_of(x).record(std::move(out), {x},
                           [xid, imin, imax, range, saved = std::move(saved)](Tape& t, const std::vector<double>& g) {
                             auto& gx = t.grad_buffer(xid);
                             double gsum = 0.0, gy = 0.0;
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i] / range;
                               gsum += g[i];
                               gy += g[i] * saved[i];
                             }
                             gx[imin] += (gy - gsum) / range;
                             gx[imax] -= gy / range;
                           });
}

Var gap(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("gap: expected H×W or H×W×K, got " + shape_str(s));
  const std::size_t pixels = s[0] * s[1];
  if (pixels == 0) throw ShapeError("gap: empty spatial extent");
  const std::size_t k = s.size() == 3 ? s[2] : 1;
  Tensor out(Shape{k});
  const auto& v = x.value();
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < k; ++c) out[c] += v[p * k + c];
  const double inv = 1.0 / static_cast<double>(pixels);
  for (std::size_t c = 0; c < k; ++c) out[c] *= inv;
  const auto xid = x.id();
  return tape_of(x).record(std::move(out), {x}, [xid, pixels, k, inv](Tape& t, const std::vector<double>& g) {
    auto& gx = t.grad_buffer(xid);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < k; ++c) gx[p * k + c] += g[c] * inv;
  });
}

Var hadamard(const Var& map, const Var& features) {
  require_rank(map, 2, "hadamard");
  require_rank(features, 3, "hadamard");
  const auto& ms = map.shape();
  const auto& fs = features.shape();
  if (ms[0] != fs[0] || ms[1] != fs[1])
    throw ShapeError("hadamard: map " + shape_str(ms) + " does not match features " + shape_str(fs));
  const std::size_t pixels = ms[0] * ms[1], c = fs[2];
  const auto& m = map.value();
  const auto& f = features.value();
  Tensor out(fs);
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t k = 0; k < c; ++k) out[p * c + k] = m[p] * f[p * c + k];
  const auto mid = map.id(), fid = features.id();
  return tape_of(map).record(std::move(out), {map, features}, [mid, fid, pixels, c](Tape& t, const std::vector<double>& g) {
    const auto& m = t.value(mid);
    const auto& f = t.value(fid);
    if (t.requires_grad(mid)) {
      auto& gm = t.grad_buffer(mid);
      for (std::size_t p = 0; p < pixels; ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k) acc += g[p * c + k] * f[p * c + k];
        gm[p] += acc;
      }
    }
    if (t.requires_grad(fid)) {
      auto& gf = t.grad_buffer(fid);
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t k = 0; k < c; ++k) gf[p * c + k] += g[p * c + k] * m[p];
    }
  });
}

Var cosine_sim(const Var& a, const Var& b, double eps) {
  const auto& va = a.value();
  const auto& vb = b.value();
  if (va.size() != vb.size()) throw ShapeError("cosine_sim: length mismatch");
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    aa += va[i] * va[i];
    bb += vb[i] * vb[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  auto& tape = tape_of(a);
  if (na == 0.0 && nb == 0.0) tape.warn("cosine_sim: both vectors are zero");
  // Clamping the denominator (rather than adding eps) keeps the value exactly scale invariant.
  const bool clamped = na * nb <= eps;
  const double den = clamped ? eps : na * nb;
  const auto aid = a.id(), bid = b.id();
  return tape.record(Tensor::scalar(dot / den), {a, b},
                     [aid, bid, dot, na, nb, den, clamped](Tape& t, const std::vector<double>& g) {
                       const auto& va = t.value(aid);
                       const auto& vb = t.value(bid);
                       const double s = g[0];
                       if (t.requires_grad(aid)) {
                         auto& ga = t.grad_buffer(aid);
                         const double c = clamped ? 0.0 : dot / (na * na * den);
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * (vb[i] / den - c * va[i]);
                       }
                       if (t.requires_grad(bid)) {
                         auto& gb = t.grad_buffer(bid);
                         const double c = clamped ? 0.0 : dot / (nb * nb * den);
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += s * (va[i] / den - c * vb[i]);
                       }
                     });
}

Var l2_normalize(const Var& x, double eps) {
  const auto& v = x.value();
  double ss = 0.0;
  for (double e : v.data()) ss += e * e;
  const double n = std::sqrt(ss);
  const bool clamped = n <= eps;
  const double den = clamped ? eps : n;
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / den;
  const auto xid = x.id();
  return tape_of(x).record(std::move(out), {x}, [xid, den, clamped](Tape& t, const std::vector<double>& g) {
    const auto& v = t.value(xid);
    auto& gx = t.grad_buffer(xid);
    double gdotx = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gdotx += g[i] * v[i];
    const double c = clamped ? 0.0 : gdotx / (den * den * den);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / den - c * v[i];
  });
}

Var logsumexp(const Var& x) {
  const auto& v = x.value();
  if (v.size() == 0) throw ShapeError("logsumexp: empty input");
  const double m = *std::max_element(v.data().begin(), v.data().end());
  double s = 0.0;
  for (double e : v.data()) s += std::exp(e - m);
  const double lse = m + std::log(s);
  const auto xid = x.id();
  return tape_of(x).record(Tensor::scalar(lse), {x}, [xid, lse](Tape& t, const std::vector<double>& g) {
    const auto& v = t.value(xid);
    auto& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * std::exp(v[i] - lse);
  });
}

}  // namespace ops
}  // namespace looptrans
