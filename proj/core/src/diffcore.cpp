#include "cmwm/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cmwm/errors.hpp"

namespace cmwm {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_string());
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << rows_ << "x" << cols_;
  return out.str();
}

// ---------------------------------------------------------------- ParamStore

std::size_t ParamStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamStore::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- Tape

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::bind(const ParamStore& params) {
  if (params_ == &params && param_nodes_.size() == params.size()) return;
  if (params_ != nullptr && params_ != &params) {
    throw Error("tape is already bound to a different parameter store");
  }
  params_ = &params;
  param_nodes_.assign(params.size(), std::nullopt);
}

Var Tape::param(std::size_t index) {
  if (params_ == nullptr || index >= param_nodes_.size()) {
    throw Error("tape has no bound parameter " + std::to_string(index));
  }
  if (auto id = param_nodes_[index]) return {this, *id};
  Node n;
  n.external = &(*params_)[index];
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_[index] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(fn));
}

Var Tape::push(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (p.tape() != this) throw Error("op mixes nodes from different tapes");
      if (nodes_[p.id()].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward on a foreign node");
  const Tensor& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + lv.shape_string());
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.grad.empty()) return n.grad;
  const Tensor& val = value(v.id());
  return Tensor(val.rows(), val.cols());
}

std::vector<Tensor> Tape::param_grads() const {
  std::vector<Tensor> out;
  if (params_ == nullptr) return out;
  out.reserve(param_nodes_.size());
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    const Tensor& p = (*params_)[i];
    if (param_nodes_[i] && !nodes_[*param_nodes_[i]].grad.empty()) {
      out.push_back(nodes_[*param_nodes_[i]].grad);
    } else {
      out.emplace_back(p.rows(), p.cols());
    }
  }
  return out;
}

// ---------------------------------------------------------------- helpers

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

// Elementwise unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xid = x.id();
  return tape.push(std::move(out), {x}, [xid, deriv](Tape& t, std::size_t self) {
    if (!t.needs_grad(xid)) return;
    const Tensor& g = t.grad_ref(self);
    const Tensor& in = t.value(xid);
    const Tensor& outv = t.value(self);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(in[i], outv[i]);
  });
}

// Mean over entries of an elementwise scalar loss.
template <typename Fwd, typename Deriv>
Var mean_loss(Var r, Fwd fwd, Deriv deriv) {
  Tape& tape = *r.tape();
  const Tensor& rv = r.value();
  if (rv.empty()) throw ShapeError("loss over an empty residual");
  double acc = 0.0;
  for (double v : rv.values()) acc += fwd(v);
  const double n = static_cast<double>(rv.size());
  const std::size_t rid = r.id();
  return tape.push(Tensor::scalar(acc / n), {r}, [rid, n, deriv](Tape& t, std::size_t self) {
    if (!t.needs_grad(rid)) return;
    const double g = t.grad_ref(self)[0] / n;
    const Tensor& in = t.value(rid);
    Tensor& gr = t.grad_buffer(rid);
    for (std::size_t i = 0; i < in.size(); ++i) gr[i] += g * deriv(in[i]);
  });
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---------------------------------------------------------------- linear algebra

Var affine(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
  if (wv.cols() != in || bv.rows() != 1 || bv.cols() != out) {
    throw ShapeError("affine: x " + xv.shape_string() + ", W " + wv.shape_string() + ", b " +
                     bv.shape_string());
  }
  Tensor y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.row_ptr(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = wv.row_ptr(o);
      double acc = bv[o];
      for (std::size_t k = 0; k < in; ++k) acc += wr[k] * xr[k];
      y(i, o) = acc;
    }
  }
  const std::size_t xid = x.id(), wid = weight.id(), bid = bias.id();
  return x.tape()->push(std::move(y), {x, weight, bias},
                        [xid, wid, bid, n, in, out](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(xid)) {
      const Tensor& w = t.value(wid);
      Tensor& gx = t.grad_buffer(xid);
      for (std::size_t i = 0; i < n; ++i) {
        double* gxr = gx.row_ptr(i);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g(i, o);
          if (go == 0.0) continue;
          const double* wr = w.row_ptr(o);
          for (std::size_t k = 0; k < in; ++k) gxr[k] += go * wr[k];
        }
      }
    }
    if (t.needs_grad(wid)) {
      const Tensor& xin = t.value(xid);
      Tensor& gw = t.grad_buffer(wid);
      for (std::size_t i = 0; i < n; ++i) {
        const double* xr = xin.row_ptr(i);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g(i, o);
          if (go == 0.0) continue;
          double* gwr = gw.row_ptr(o);
          for (std::size_t k = 0; k < in; ++k) gwr[k] += go * xr[k];
        }
      }
    }
    if (t.needs_grad(bid)) {
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) gb[o] += g(i, o);
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      for (std::size_t j = 0; j < m; ++j) c(i, j) += aip * bv(p, j);
    }
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->push(std::move(c), {a, b}, [aid, bid, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(aid)) {
      const Tensor& bvv = t.value(bid);
      Tensor& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g(i, j) * bvv(p, j);
          ga(i, p) += acc;
        }
    }
    if (t.needs_grad(bid)) {
      const Tensor& avv = t.value(aid);
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = avv(i, p);
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
        }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  if (bv.cols() != k) {
    throw ShapeError("matmul_nt: " + av.shape_string() + " x " + bv.shape_string() + "^T");
  }
  Tensor c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av(i, p) * bv(j, p);
      c(i, j) = acc;
    }
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->push(std::move(c), {a, b}, [aid, bid, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(aid)) {
      const Tensor& bvv = t.value(bid);
      Tensor& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g(i, j);
          for (std::size_t p = 0; p < k; ++p) ga(i, p) += gij * bvv(j, p);
        }
    }
    if (t.needs_grad(bid)) {
      const Tensor& avv = t.value(aid);
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g(i, j);
          for (std::size_t p = 0; p < k; ++p) gb(j, p) += gij * avv(i, p);
        }
    }
  });
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->push(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    for (std::size_t id : {aid, bid}) {
      if (!t.needs_grad(id)) continue;
      Tensor& gi = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->push(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(aid)) {
      Tensor& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bid)) {
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->push(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.needs_grad(aid)) {
      const Tensor& other = t.value(bid);
      Tensor& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * other[i];
    }
    if (t.needs_grad(bid)) {
      const Tensor& other = t.value(aid);
      Tensor& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * other[i];
    }
  });
}

Var scale(Var x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var cos(Var x) {
  return unary(x, [](double v) { return std::cos(v); },
               [](double v, double) { return -std::sin(v); });
}

Var sin(Var x) {
  return unary(x, [](double v) { return std::sin(v); },
               [](double v, double) { return std::cos(v); });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------- structure

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor out(n, total);
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.row_ptr(i), v.cols(), out.row_ptr(i) + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(v.cols());
    off += v.cols();
  }
  return parts.front().tape()->push(
      std::move(out), parts, [ids, offsets, widths, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_ref(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.needs_grad(ids[p])) continue;
          Tensor& gp = t.grad_buffer(ids[p]);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[p]; ++j) gp(i, j) += g(i, offsets[p] + j);
        }
      });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.cols()) {
    throw ShapeError("slice_cols out of range on " + xv.shape_string());
  }
  Tensor out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i) std::copy_n(xv.row_ptr(i) + begin, count, out.row_ptr(i));
  const std::size_t xid = x.id();
  return x.tape()->push(std::move(out), {x}, [xid, begin, count](Tape& t, std::size_t self) {
    if (!t.needs_grad(xid)) return;
    const Tensor& g = t.grad_ref(self);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) gx(i, begin + j) += g(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != m) throw ShapeError("concat_rows: column count mismatch");
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * m);
  std::vector<std::size_t> ids, sizes;
  for (const Var& p : parts) {
    const auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
    ids.push_back(p.id());
    sizes.push_back(v.size());
  }
  return parts.front().tape()->push(Tensor(total, m, std::move(data)), parts,
                                    [ids, sizes](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (t.needs_grad(ids[p])) {
        Tensor& gp = t.grad_buffer(ids[p]);
        for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += g[off + i];
      }
      off += sizes[p];
    }
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  const std::size_t xid = x.id();
  return x.tape()->push(Tensor::scalar(acc), {x}, [xid](Tape& t, std::size_t self) {
    if (!t.needs_grad(xid)) return;
    const double g = t.grad_ref(self)[0];
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (n == 0) throw ShapeError("mean_rows of empty tensor");
  Tensor out(1, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += xv(i, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < m; ++j) out[j] *= inv;
  const std::size_t xid = x.id();
  return x.tape()->push(std::move(out), {x}, [xid, n, m, inv](Tape& t, std::size_t self) {
    if (!t.needs_grad(xid)) return;
    const Tensor& g = t.grad_ref(self);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx(i, j) += g[j] * inv;
  });
}

Var detach(Var x) { return x.tape()->constant(x.value()); }

// ---------------------------------------------------------------- losses

double smooth_l1_value(double r, double beta) {
  const double a = std::abs(r);
  return a < beta ? 0.5 * r * r / beta : a - 0.5 * beta;
}

double huber_value(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double hinge_squared_value(double r, double delta) {
  const double excess = std::abs(r) - delta;
  return excess > 0.0 ? excess * excess : 0.0;
}

Var smooth_l1(Var residual, double beta) {
  if (!(beta > 0.0)) throw ValidationError("smooth_l1 requires beta > 0");
  return mean_loss(residual, [beta](double r) { return smooth_l1_value(r, beta); },
                   [beta](double r) { return std::abs(r) < beta ? r / beta : sign(r); });
}

Var huber(Var residual, double delta) {
  if (!(delta > 0.0)) throw ValidationError("huber requires delta > 0");
  return mean_loss(residual, [delta](double r) { return huber_value(r, delta); },
                   [delta](double r) { return std::abs(r) <= delta ? r : delta * sign(r); });
}

Var hinge_squared(Var residual, double delta) {
  if (!(delta > 0.0)) throw ValidationError("hinge_squared requires delta > 0");
  return mean_loss(residual, [delta](double r) { return hinge_squared_value(r, delta); },
                   [delta](double r) {
                     const double excess = std::abs(r) - delta;
                     return excess > 0.0 ? 2.0 * excess * sign(r) : 0.0;
                   });
}

// ---------------------------------------------------------------- composites

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ValidationError("dropout rate must be < 1");
  const Tensor& xv = x.value();
  Tensor mask(xv.rows(), xv.cols());
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? inv : 0.0;
  return mul(x, x.tape()->constant(std::move(mask)));
}

Var gru_step(Var h_prev, Var input, const GruWeights& w) {
  if (h_prev.rows() != input.rows()) throw ShapeError("gru_step: batch mismatch");
  const Var joint = concat_cols({input, h_prev});
  const Var reset = sigmoid(affine(joint, w.reset_w, w.reset_b));
  const Var update = sigmoid(affine(joint, w.update_w, w.update_b));
  if (update.cols() != h_prev.cols()) {
    throw ShapeError("gru_step: hidden size " + std::to_string(h_prev.cols()) +
                     " does not match gate width " + std::to_string(update.cols()));
  }
  const Var cand = tanh(affine(concat_cols({input, mul(reset, h_prev)}), w.cand_w, w.cand_b));
  return add(h_prev, mul(update, sub(cand, h_prev)));
}

}  // namespace cmwm
