#include "eaxl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eaxl/error.hpp"
#include "eaxl/kernels.hpp"

namespace eaxl {

const Tensor& Var::value() const {
  if (!tape_) throw Error("value() on an unbound Var");
  return tape_->value(id_);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.view = &p.value;
  if (grad_enabled_) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    n.sink = &p.grad;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter& p) {
  Node n;
  n.view = &p.value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  if (id >= nodes_.size()) throw Error("tape node id out of range");
  return node_value(nodes_[id]);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
#ifdef EAXL_CHECK_FINITE
  check_finite(value, "recorded op");
#endif
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error("op mixes variables from different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_ && needs) {
    n.requires_grad = true;
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Scalar* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.sink) return n.sink->data();
  if (!n.grad_live) {
    n.grad = Tensor(node_value(n).shape());
    n.grad_live = true;
  }
  return n.grad.data();
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss is not on this tape");
  if (backward_done_) throw Error("backward: tape already consumed");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " +
                         shape_to_string(lv.shape()));
  }
  backward_done_ = true;
  Scalar* seed = grad_buffer(loss.id());
  if (!seed) return;
  seed[0] += 1;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad_live) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.tape() != this) throw Error("grad: variable is not on this tape");
  const Node& n = nodes_[v.id()];
  if (n.sink) return *n.sink;
  if (n.grad_live) return n.grad;
  return Tensor(node_value(n).shape());
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("op on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("op mixes variables from different tapes");
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void accumulate(Scalar* dst, const Scalar* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward f, Derivative df) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io, df](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(io);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_to_string(av.shape()) +
                         " x " + shape_to_string(bv.shape()));
  }
  Tensor out({m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) {
      std::vector<Scalar> tmp(m * k);
      kernels::matmul_nt(g.data(), tp.value(ib).data(), tmp.data(), m, n, k);
      accumulate(ga, tmp.data(), tmp.size());
    }
    if (Scalar* gb = tp.grad_buffer(ib)) {
      std::vector<Scalar> tmp(k * n);
      kernels::matmul_tn(tp.value(ia).data(), g.data(), tmp.data(), m, k, n);
      accumulate(gb, tmp.data(), tmp.size());
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) accumulate(ga, g.data(), g.size());
    if (Scalar* gb = tp.grad_buffer(ib)) accumulate(gb, g.data(), g.size());
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) accumulate(ga, g.data(), g.size());
    if (Scalar* gb = tp.grad_buffer(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) {
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (Scalar* gb = tp.grad_buffer(ib)) {
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, Scalar s) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, s](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    }
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw DimensionError("add_row: bias " + shape_to_string(bv.shape()) + " does not match " +
                         shape_to_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return t.record(std::move(out), {a, bias}, [ia, ib, m, n](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) accumulate(ga, g.data(), g.size());
    if (Scalar* gb = tp.grad_buffer(ib)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var mul_row(Var a, Var gain) {
  Tape& t = tape_of(a, gain);
  const Tensor& av = a.value();
  const Tensor& gv = gain.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (gv.size() != n) {
    throw DimensionError("mul_row: gain " + shape_to_string(gv.shape()) + " does not match " +
                         shape_to_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * gv[j];
  const std::size_t ia = a.id(), ig = gain.id();
  return t.record(std::move(out), {a, gain}, [ia, ig, m, n](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) {
      const Tensor& gv = tp.value(ig);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * gv[j];
    }
    if (Scalar* gg = tp.grad_buffer(ig)) {
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * av[i * n + j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_rows: variables from different tapes");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_to_string(p.shape()) +
                           " vs " + std::to_string(n));
    }
    total += p.rows();
  }
  Tensor out({total, n});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.data() + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.size();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, const Tensor& g) {
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (Scalar* gp = tp.grad_buffer(ids[p])) {
        accumulate(gp, g.data() + offsets[p], tp.value(ids[p]).size());
      }
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_cols: variables from different tapes");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_to_string(p.shape()) + " vs " +
                           std::to_string(m));
    }
    total += p.cols();
  }
  Tensor out({m, total});
  std::vector<std::size_t> ids, offsets;
  std::size_t col = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data() + i * c, c, out.data() + i * total + col);
    ids.push_back(p.id());
    offsets.push_back(col);
    col += c;
  }
  return t.record(std::move(out), parts, [ids, offsets, m, total](Tape& tp, const Tensor& g) {
    for (std::size_t p = 0; p < ids.size(); ++p) {
      Scalar* gp = tp.grad_buffer(ids[p]);
      if (!gp) continue;
      const std::size_t c = tp.value(ids[p]).cols();
      for (std::size_t i = 0; i < m; ++i)
        accumulate(gp + i * c, g.data() + i * total + offsets[p], c);
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (count == 0 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") outside " + shape_to_string(av.shape()));
  }
  const std::size_t n = av.cols();
  Tensor out({count, n});
  std::copy_n(av.data() + begin * n, count * n, out.data());
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, begin, n](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) accumulate(ga + begin * n, g.data(), g.size());
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (count == 0 || begin + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") outside " + shape_to_string(av.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.data() + i * n + begin, count, out.data() + i * count);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, begin, count, m, n](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i) accumulate(ga + i * n + begin, g.data() + i * count, count);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, m, n](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + ids[r] * d, d, out.data() + r * d);
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [it, rows, d](Tape& tp, const Tensor& g) {
    Scalar* gt = tp.grad_buffer(it);
    if (!gt) return;
    for (std::size_t r = 0; r < rows.size(); ++r) accumulate(gt + rows[r] * d, g.data() + r * d, d);
  });
}

Var gather_cols(Var a, std::span<const std::size_t> index, std::size_t k) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (index.size() != m * k) {
    throw DimensionError("gather_cols: index has " + std::to_string(index.size()) +
                         " entries, expected " + std::to_string(m * k));
  }
  Tensor out({m, k});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t c = index[i * k + j];
      if (c >= n) throw DimensionError("gather_cols: column index out of range");
      out[i * k + j] = av[i * n + c];
    }
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return t.record(std::move(out), {a}, [ia, idx, m, n, k](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) ga[i * n + idx[i * k + j]] += g[i * k + j];
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](Scalar x) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](Scalar x) { return std::tanh(x); },
      [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Var relu(Var a) {
  return unary(
      a, [](Scalar x) { return x > 0 ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

namespace {

// Softmax backward along contiguous rows: dx = y * (g - <g, y>).
void softmax_rows_backward(const Scalar* y, const Scalar* g, Scalar* gx, std::size_t rows,
                           std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const Scalar* yr = y + i * cols;
    const Scalar* gr = g + i * cols;
    Scalar dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
    for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += yr[j] * (gr[j] - dot);
  }
}

}  // namespace

Var softmax(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (axis >= av.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_to_string(av.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols();
  const bool along_rows = axis + 1 == av.rank();
  Tensor out(av.shape());
  if (along_rows) {
    kernels::softmax_rows(av.data(), out.data(), m, n);
  } else {
    // Columns of a matrix: gather each column, reuse the row kernel.
    std::vector<Scalar> col(m), res(m);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) col[i] = av[i * n + j];
      kernels::serial::softmax_rows(col.data(), res.data(), 1, m);
      for (std::size_t i = 0; i < m; ++i) out[i * n + j] = res[i];
    }
  }
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io, m, n, along_rows](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    const Tensor& y = tp.value(io);
    if (along_rows) {
      softmax_rows_backward(y.data(), g.data(), ga, m, n);
      return;
    }
    for (std::size_t j = 0; j < n; ++j) {
      Scalar dot = 0;
      for (std::size_t i = 0; i < m; ++i) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var masked_softmax(Var a, const std::vector<bool>& allowed) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (allowed.size() != m * n) {
    throw DimensionError("masked_softmax: mask size " + std::to_string(allowed.size()) +
                         " does not match " + shape_to_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    bool any = false;
    Scalar max_v = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed[i * n + j]) continue;
      max_v = any ? std::max(max_v, av[i * n + j]) : av[i * n + j];
      any = true;
    }
    if (!any) throw DimensionError("masked_softmax: row with no allowed entries");
    Scalar total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Scalar e = allowed[i * n + j] ? std::exp(av[i * n + j] - max_v) : Scalar(0);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io, m, n](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) softmax_rows_backward(tp.value(io).data(), g.data(), ga, m, n);
  });
}

Var row_standardize(Var a, Scalar eps) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape());
  std::vector<Scalar> stds(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar* x = av.data() + i * n;
    Scalar* y = out.data() + i * n;
    if (std::all_of(x, x + n, [&](Scalar v) { return v == x[0]; })) {
      std::fill(y, y + n, Scalar(0));
      continue;
    }
    Scalar mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<Scalar>(n);
    Scalar var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    const Scalar s = std::sqrt(var / static_cast<Scalar>(n));
    stds[i] = s;
    for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mu) / (s + eps);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, m, n, eps, stds](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    const Tensor& av = tp.value(ia);
    std::vector<Scalar> c(n), gc(n);
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar* x = av.data() + i * n;
      const Scalar* gr = g.data() + i * n;
      Scalar mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += x[j];
      mu /= static_cast<Scalar>(n);
      for (std::size_t j = 0; j < n; ++j) c[j] = x[j] - mu;
      const Scalar s = stds[i];
      const Scalar denom = s + eps;
      Scalar gdotc = 0;
      for (std::size_t j = 0; j < n; ++j) gdotc += gr[j] * c[j];
      for (std::size_t j = 0; j < n; ++j) {
        gc[j] = gr[j] / denom;
        if (s > 0) gc[j] -= gdotc / (denom * denom) * c[j] / (static_cast<Scalar>(n) * s);
      }
      Scalar gmean = 0;
      for (std::size_t j = 0; j < n; ++j) gmean += gc[j];
      gmean /= static_cast<Scalar>(n);
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gc[j] - gmean;
    }
  });
}

Var dropout(Var a, Scalar p, Rng& rng, bool training) {
  if (!(p >= 0 && p < 1)) throw NumericError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0) return a;
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - p);
  std::vector<Scalar> mask(av.size());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    mask[i] = rng.uniform() < p ? Scalar(0) : keep_scale;
    out[i] = av[i] * mask[i];
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, mask](Tape& tp, const Tensor& g) {
    if (Scalar* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Scalar total = 0;
  for (Scalar v : av.values()) total += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(total), {a}, [ia](Tape& tp, const Tensor& g) {
    Scalar* ga = tp.grad_buffer(ia);
    if (!ga) return;
    const std::size_t n = tp.value(ia).size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size())); }

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::size_t ignore_id) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows(), vocab = lv.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  std::size_t count = 0;
  for (std::size_t tgt : targets) {
    if (tgt == ignore_id) continue;
    if (tgt >= vocab) {
      throw DataError("cross_entropy: target " + std::to_string(tgt) + " outside [0, " +
                      std::to_string(vocab) + ")");
    }
    ++count;
  }
  if (count == 0) return t.constant(Tensor::scalar(0));

  Tensor probs({rows, vocab});
  kernels::softmax_rows(lv.data(), probs.data(), rows, vocab);
  Scalar total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    const Scalar* x = lv.data() + r * vocab;
    const Scalar max_v = *std::max_element(x, x + vocab);
    Scalar z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(x[j] - max_v);
    total += std::log(z) + max_v - x[targets[r]];
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  const std::size_t il = logits.id();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return t.record(Tensor::scalar(total * inv), {logits},
                  [il, tg, ignore_id, inv, vocab, probs = std::move(probs)](Tape& tp, const Tensor& g) {
                    Scalar* gl = tp.grad_buffer(il);
                    if (!gl) return;
                    const Scalar scale_g = g[0] * inv;
                    for (std::size_t r = 0; r < tg.size(); ++r) {
                      if (tg[r] == ignore_id) continue;
                      for (std::size_t j = 0; j < vocab; ++j) {
                        const Scalar onehot = j == tg[r] ? Scalar(1) : Scalar(0);
                        gl[r * vocab + j] += scale_g * (probs[r * vocab + j] - onehot);
                      }
                    }
                  });
}

}  // namespace eaxl
