#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "eaxl/rng.hpp"
#include "eaxl/tensor.hpp"

namespace eaxl {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records forward ops in topological order and replays their backward rules
/// in reverse. A tape created with grad disabled records values only.
class Tape {
 public:
  /// Propagates the output gradient into the inputs' gradient buffers.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Owned value that receives a gradient (readable through grad()).
  Var leaf(Tensor value);
  /// View of a parameter; backward accumulates into `p.grad`.
  Var param(Parameter& p);
  /// Read-only view of a parameter.
  Var param(const Parameter& p);

  /// Single reverse pass from a scalar loss seeded with 1.
  void backward(Var loss);

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Op-author interface: records `value` as the output of an op over `inputs`.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }
  /// Gradient accumulator of node `id`, or nullptr if it does not require grad.
  Scalar* grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* view = nullptr;
    Tensor* sink = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    BackwardFn backward;
  };

  const Tensor& node_value(const Node& n) const { return n.view ? *n.view : n.owned; }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Primitive ops. All inputs must belong to the same tape. Shapes follow the
// matrix view of Tensor (rank-1 is a single row).

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
/// a[m,n] + bias[n], broadcast over rows.
Var add_row(Var a, Var bias);
/// a[m,n] * gain[n], broadcast over rows.
Var mul_row(Var a, Var gain);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var transpose(Var a);

/// Rows of `table` selected by `ids`; backward scatter-adds into the table.
Var embedding(Var table, std::span<const std::size_t> ids);
/// out[i, j] = a[i, index[i * k + j]] for an index matrix with k columns.
Var gather_cols(Var a, std::span<const std::size_t> index, std::size_t k);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

Var softmax(Var a, std::size_t axis);
/// Row softmax where entries with allowed[i] == false get probability 0.
/// Every row must allow at least one entry.
Var masked_softmax(Var a, const std::vector<bool>& allowed);

/// Per-row (x - mean) / (population std + eps). Rows whose entries are all
/// equal map to exact zeros.
Var row_standardize(Var a, Scalar eps);

/// Inverted dropout; identity when `training` is false or p == 0.
Var dropout(Var a, Scalar p, Rng& rng, bool training);

Var sum(Var a);
Var mean(Var a);

/// Mean over non-ignored rows of -log softmax(logits)[target]. A batch where
/// every target is `ignore_id` yields 0 with zero gradient.
Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::size_t ignore_id);

/// Throws NumericError when `t` holds NaN or Inf.
void check_finite(const Tensor& t, const char* op);

}  // namespace eaxl
