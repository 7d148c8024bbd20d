#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

// Minimal shaped-array core with reverse-mode differentiation. The
// operation set is exactly what the transformer needs; no views other than
// reshape, broadcasting only right-aligned (trailing dims equal or 1).
// float is the training precision, double the gradient-check precision.

namespace healswin::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Array {
  Shape shape;
  std::vector<T> v;

  static Array zeros(Shape s) {
    Array a;
    a.v.assign(static_cast<std::size_t>(numel(s)), T(0));
    a.shape = std::move(s);
    return a;
  }
  static Array full(Shape s, T value) {
    Array a;
    a.v.assign(static_cast<std::size_t>(numel(s)), value);
    a.shape = std::move(s);
    return a;
  }
};

/// Ordered record of primitive operations. Creation order is topological;
/// backward walks it once in reverse. A tape is single-threaded; distinct
/// tapes may run concurrently.
template <typename T>
class Tape {
 public:
  struct Var {
    std::int32_t id{-1};
    bool ok() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When false, ops compute values but record no backward closures.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  Var constant(Array<T> a);
  Var scalar(T value);
  Var param(Array<T> a);  // leaf with requires_grad

  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  const std::vector<T>& value(Var v) const { return nodes_[v.id].value; }
  /// Empty until backward has reached the node.
  const std::vector<T>& grad(Var v) const { return nodes_[v.id].grad; }

  // -- primitives ----------------------------------------------------------
  Var reshape(Var x, Shape s);
  Var permute(Var x, const std::vector<int>& axes);
  Var matmul(Var a, Var b);  // batched; b may be rank-2 (shared across batch)
  Var add(Var a, Var b);     // b broadcasts right-aligned onto a
  Var mul(Var a, Var b);     // same broadcast rule
  Var scale(Var x, T c);
  Var add_scalar(Var x, T c);
  Var exp(Var x);
  Var reciprocal(Var x);
  Var clamp_min(Var x, T floor);
  Var gelu(Var x);
  Var softmax_rows(Var x);  // last axis; a row must contain a finite entry
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var l2_normalize_rows(Var x, T eps = T(1e-12));
  Var gather_rows(Var x, std::vector<std::int64_t> idx);
  Var scatter_add_rows(Var x, std::vector<std::int64_t> idx, std::int64_t out_rows);
  /// Fills entries where mask != 0. mask broadcasts right-aligned.
  Var masked_fill(Var x, std::vector<std::uint8_t> mask, Shape mask_shape, T fill);
  Var concat_last(Var a, Var b);
  Var sum_all(Var x);   // -> shape {1}
  Var mean_all(Var x);  // -> shape {1}
  /// Weighted pixel-wise cross entropy: sum_i w_i * nll(logits_i, label_i)
  /// * inv_denom. Rows with w_i = 0 are skipped and may carry label -1.
  Var cross_entropy_rows(Var logits, std::vector<std::int32_t> labels, std::vector<T> row_weight,
                         T inv_denom);

  // -- composites ----------------------------------------------------------
  Var linear(Var x, Var w, Var b);  // x (..., in) @ w (in, out) + b (out)

  /// Populates gradients of every requires_grad node reachable from loss.
  void backward(Var loss);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad{false};
    std::function<void()> backprop;
  };

  Var push(Shape shape, std::vector<T> value, bool requires_grad);
  std::vector<T>& grad_buf(Var v);
  void record(Var out, std::function<void()> fn);

  std::vector<Node> nodes_;
  bool recording_{true};
};

/// Cosine-similarity attention: scores = cos(q_i, k_j)/tau + bias, masked
/// pairs forced to -inf before the row softmax, output = probs @ v.
/// q, k, v: (windows, heads, window_size, head_dim); tau: (heads) with all
/// entries >= tau_min; bias: (heads, window_size, window_size);
/// blocked: per-window byte matrix, nonzero = do not attend (pass empty for
/// an unmasked block).
template <typename T>
typename Tape<T>::Var cosine_attention(Tape<T>& tape, typename Tape<T>::Var q,
                                       typename Tape<T>::Var k, typename Tape<T>::Var v,
                                       typename Tape<T>::Var tau, typename Tape<T>::Var bias,
                                       const std::vector<std::uint8_t>& blocked, T tau_min);

struct AdamConfig {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  double weight_decay{0.0};
};

/// Named parameter set with AdamW state. Entry order is creation order and
/// fixes both tape registration and update order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Array<T> value;
    Array<T> m;
    Array<T> v;
  };

  std::int64_t add(std::string name, Array<T> init);
  Entry& entry(std::int64_t i) { return entries_[i]; }
  const Entry& entry(std::int64_t i) const { return entries_[i]; }
  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }
  std::int64_t total_parameters() const;
  std::int64_t find(const std::string& name) const;  // -1 if absent

  /// One decoupled-weight-decay Adam step over all entries.
  void adamw_step(const std::vector<std::vector<T>>& grads, const AdamConfig& cfg);
  std::int64_t step_count() const { return step_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::int64_t> index_;
  std::int64_t step_{0};
};

}  // namespace healswin::ad
