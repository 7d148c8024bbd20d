#include "healswin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "healswin/threading.hpp"

namespace healswin::ad {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

// Right-aligned broadcast of b onto a: every b dim is 1 or equals the
// corresponding a dim. Returns per-a-axis strides into b (0 where broadcast).
std::vector<std::int64_t> broadcast_strides(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size()) shape_error(op, a, b);
  std::vector<std::int64_t> strides(a.size(), 0);
  std::int64_t stride = 1;
  const std::size_t off = a.size() - b.size();
  for (std::size_t i = b.size(); i-- > 0;) {
    const std::int64_t bd = b[i];
    if (bd != 1 && bd != a[off + i]) shape_error(op, a, b);
    strides[off + i] = bd == 1 ? 0 : stride;
    stride *= bd;
  }
  return strides;
}

// Maps a linear index over `a` to the matching linear index into the
// broadcast operand.
struct BroadcastIndex {
  Shape a_shape;
  std::vector<std::int64_t> strides;
  bool identity;   // same shape, dense
  std::int64_t modulo;  // >0 when b is an exact suffix of a

  std::int64_t operator()(std::int64_t i) const {
    if (identity) return i;
    if (modulo > 0) return i % modulo;
    std::int64_t rem = i;
    std::int64_t out = 0;
    for (std::size_t ax = a_shape.size(); ax-- > 0;) {
      const std::int64_t d = a_shape[ax];
      out += (rem % d) * strides[ax];
      rem /= d;
    }
    return out;
  }
};

BroadcastIndex make_bindex(const char* op, const Shape& a, const Shape& b) {
  BroadcastIndex bi;
  bi.a_shape = a;
  bi.strides = broadcast_strides(op, a, b);
  bi.identity = a == b;
  bi.modulo = 0;
  if (!bi.identity) {
    const std::size_t off = a.size() - b.size();
    bool suffix = true;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b[i] != a[off + i]) suffix = false;
    if (suffix) bi.modulo = numel(b);
  }
  return bi;
}

std::vector<std::int64_t> dense_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size() - 1; i-- > 0;) st[i] = st[i + 1] * s[i + 1];
  return st;
}

template <typename T>
void permute_raw(const std::vector<T>& in, const Shape& in_shape, const std::vector<int>& axes,
                 std::vector<T>& out, Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  out_shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = dense_strides(in_shape);
  std::vector<std::int64_t> gather_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) gather_strides[i] = in_strides[axes[i]];
  const std::int64_t n = numel(in_shape);
  out.resize(static_cast<std::size_t>(n));
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      std::int64_t rem = i, src = 0;
      for (std::size_t ax = rank; ax-- > 0;) {
        src += (rem % out_shape[ax]) * gather_strides[ax];
        rem /= out_shape[ax];
      }
      out[i] = in[src];
    }
  });
}

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::push(Shape shape, std::vector<T> value, bool requires_grad) {
  if (static_cast<std::int64_t>(value.size()) != numel(shape))
    throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
std::vector<T>& Tape<T>::grad_buf(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::record(Var out, std::function<void()> fn) {
  if (recording_ && nodes_[out.id].requires_grad) nodes_[out.id].backprop = std::move(fn);
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Array<T> a) {
  return push(std::move(a.shape), std::move(a.v), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::scalar(T value) {
  return push({1}, {value}, false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::param(Array<T> a) {
  return push(std::move(a.shape), std::move(a.v), true);
}

template <typename T>
typename Tape<T>::Var Tape<T>::reshape(Var x, Shape s) {
  if (numel(s) != numel(nodes_[x.id].shape))
    shape_error("reshape", nodes_[x.id].shape, s);
  Var out = push(std::move(s), nodes_[x.id].value, nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::permute(Var x, const std::vector<int>& axes) {
  const Shape& xs = nodes_[x.id].shape;
  if (axes.size() != xs.size()) throw std::invalid_argument("permute: axes rank mismatch");
  std::vector<T> data;
  Shape out_shape;
  permute_raw(nodes_[x.id].value, xs, axes, data, out_shape);
  Var out = push(std::move(out_shape), std::move(data), nodes_[x.id].requires_grad);
  std::vector<int> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = static_cast<int>(i);
  record(out, [this, x, out, inv] {
    std::vector<T> gx_perm;
    Shape tmp;
    permute_raw(nodes_[out.id].grad, nodes_[out.id].shape, inv, gx_perm, tmp);
    auto& gx = grad_buf(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx_perm[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
  const Shape& as = nodes_[a.id].shape;
  const Shape& bs = nodes_[b.id].shape;
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  const bool shared_b = bs.size() == 2 && as.size() > 2;
  if (!shared_b && as.size() != bs.size()) shape_error("matmul", as, bs);

  const std::int64_t M = as[as.size() - 2];
  const std::int64_t K = as[as.size() - 1];
  const std::int64_t Kb = bs[bs.size() - 2];
  const std::int64_t N = bs[bs.size() - 1];
  if (K != Kb) shape_error("matmul", as, bs);
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) {
    batch *= as[i];
    if (!shared_b && bs[i] != as[i]) shape_error("matmul", as, bs);
  }

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(N);
  std::vector<T> c(static_cast<std::size_t>(batch * M * N), T(0));
  const T* av = nodes_[a.id].value.data();
  const T* bv = nodes_[b.id].value.data();

  parallel_for(batch * M, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t row = lo; row < hi; ++row) {
      const std::int64_t bt = row / M;
      const T* arow = av + row * K;
      const T* bmat = shared_b ? bv : bv + bt * K * N;
      T* crow = c.data() + row * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const T f = arow[k];
        if (f == T(0)) continue;
        const T* brow = bmat + k * N;
        for (std::int64_t n = 0; n < N; ++n) crow[n] += f * brow[n];
      }
    }
  });

  Var out = push(std::move(out_shape), std::move(c),
                 nodes_[a.id].requires_grad || nodes_[b.id].requires_grad);
  record(out, [this, a, b, out, batch, M, K, N, shared_b] {
    const auto& go = nodes_[out.id].grad;
    const T* av2 = nodes_[a.id].value.data();
    const T* bv2 = nodes_[b.id].value.data();
    if (nodes_[a.id].requires_grad) {
      auto& ga = grad_buf(a);
      parallel_for(batch * M, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t row = lo; row < hi; ++row) {
          const std::int64_t bt = row / M;
          const T* grow = go.data() + row * N;
          const T* bmat = shared_b ? bv2 : bv2 + bt * K * N;
          T* garow = ga.data() + row * K;
          for (std::int64_t k = 0; k < K; ++k) {
            const T* brow = bmat + k * N;
            T acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
            garow[k] += acc;
          }
        }
      });
    }
    if (nodes_[b.id].requires_grad) {
      auto& gb = grad_buf(b);
      if (shared_b) {
        for (std::int64_t row = 0; row < batch * M; ++row) {
          const T* arow = av2 + row * K;
          const T* grow = go.data() + row * N;
          for (std::int64_t k = 0; k < K; ++k) {
            const T f = arow[k];
            if (f == T(0)) continue;
            T* gbrow = gb.data() + k * N;
            for (std::int64_t n = 0; n < N; ++n) gbrow[n] += f * grow[n];
          }
        }
      } else {
        parallel_for(batch, [&](std::int64_t lo, std::int64_t hi) {
          for (std::int64_t bt = lo; bt < hi; ++bt) {
            const T* amat = av2 + bt * M * K;
            const T* gmat = go.data() + bt * M * N;
            T* gbmat = gb.data() + bt * K * N;
            for (std::int64_t m = 0; m < M; ++m) {
              const T* arow = amat + m * K;
              const T* grow = gmat + m * N;
              for (std::int64_t k = 0; k < K; ++k) {
                const T f = arow[k];
                if (f == T(0)) continue;
                T* gbrow = gbmat + k * N;
                for (std::int64_t n = 0; n < N; ++n) gbrow[n] += f * grow[n];
              }
            }
          }
        });
      }
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  const Shape& as = nodes_[a.id].shape;
  const BroadcastIndex bi = make_bindex("add", as, nodes_[b.id].shape);
  const auto& avv = nodes_[a.id].value;
  const auto& bvv = nodes_[b.id].value;
  std::vector<T> out_v(avv.size());
  for (std::size_t i = 0; i < avv.size(); ++i)
    out_v[i] = avv[i] + bvv[bi(static_cast<std::int64_t>(i))];
  Var out =
      push(as, std::move(out_v), nodes_[a.id].requires_grad || nodes_[b.id].requires_grad);
  record(out, [this, a, b, out, bi] {
    const auto& go = nodes_[out.id].grad;
    if (nodes_[a.id].requires_grad) {
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (nodes_[b.id].requires_grad) {
      auto& gb = grad_buf(b);
      for (std::size_t i = 0; i < go.size(); ++i)
        gb[bi(static_cast<std::int64_t>(i))] += go[i];
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  const Shape& as = nodes_[a.id].shape;
  const BroadcastIndex bi = make_bindex("mul", as, nodes_[b.id].shape);
  const auto& avv = nodes_[a.id].value;
  const auto& bvv = nodes_[b.id].value;
  std::vector<T> out_v(avv.size());
  for (std::size_t i = 0; i < avv.size(); ++i)
    out_v[i] = avv[i] * bvv[bi(static_cast<std::int64_t>(i))];
  Var out =
      push(as, std::move(out_v), nodes_[a.id].requires_grad || nodes_[b.id].requires_grad);
  record(out, [this, a, b, out, bi] {
    const auto& go = nodes_[out.id].grad;
    const auto& av2 = nodes_[a.id].value;
    const auto& bv2 = nodes_[b.id].value;
    if (nodes_[a.id].requires_grad) {
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < go.size(); ++i)
        ga[i] += go[i] * bv2[bi(static_cast<std::int64_t>(i))];
    }
    if (nodes_[b.id].requires_grad) {
      auto& gb = grad_buf(b);
      for (std::size_t i = 0; i < go.size(); ++i)
        gb[bi(static_cast<std::int64_t>(i))] += go[i] * av2[i];
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var x, T c) {
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out_v[i] = xv[i] * c;
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, c] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * c;
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add_scalar(Var x, T c) {
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out_v[i] = xv[i] + c;
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::exp(Var x) {
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out_v[i] = std::exp(xv[i]);
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& ov = nodes_[out.id].value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * ov[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::reciprocal(Var x) {
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out_v[i] = T(1) / xv[i];
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& ov = nodes_[out.id].value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= go[i] * ov[i] * ov[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::clamp_min(Var x, T floor) {
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out_v[i] = std::max(xv[i], floor);
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, floor] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& xv2 = nodes_[x.id].value;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv2[i] > floor) gx[i] += go[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::gelu(Var x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double xd = static_cast<double>(xv[i]);
    out_v[i] = static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
  }
  Var out = push(nodes_[x.id].shape, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& xv2 = nodes_[x.id].value;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double xd = static_cast<double>(xv2[i]);
      const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
      gx[i] += go[i] * static_cast<T>(cdf + xd * pdf);
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax_rows(Var x) {
  const Shape& xs = nodes_[x.id].shape;
  if (xs.empty()) throw std::invalid_argument("softmax_rows: rank-0 input");
  const std::int64_t D = xs.back();
  const std::int64_t rows = numel(xs) / D;
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T* yr = out_v.data() + r * D;
    T m = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < D; ++j) m = std::max(m, xr[j]);
    T s = T(0);
    for (std::int64_t j = 0; j < D; ++j) {
      yr[j] = std::exp(xr[j] - m);  // exp(-inf) = 0 for masked entries
      s += yr[j];
    }
    const T inv = T(1) / s;
    for (std::int64_t j = 0; j < D; ++j) yr[j] *= inv;
  }
  Var out = push(xs, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, rows, D] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& yv = nodes_[out.id].value;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* yr = yv.data() + r * D;
      const T* gr = go.data() + r * D;
      T dot = T(0);
      for (std::int64_t j = 0; j < D; ++j) dot += gr[j] * yr[j];
      T* gxr = gx.data() + r * D;
      for (std::int64_t j = 0; j < D; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const Shape& xs = nodes_[x.id].shape;
  const std::int64_t D = xs.back();
  if (nodes_[gamma.id].shape != Shape{D} || nodes_[beta.id].shape != Shape{D})
    shape_error("layer_norm", xs, nodes_[gamma.id].shape);
  const std::int64_t rows = numel(xs) / D;
  const auto& xv = nodes_[x.id].value;
  const auto& gv = nodes_[gamma.id].value;
  const auto& bv = nodes_[beta.id].value;

  std::vector<T> out_v(xv.size());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> mean(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T mu = T(0);
    for (std::int64_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<T>(D);
    T var = T(0);
    for (std::int64_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    T* yr = out_v.data() + r * D;
    for (std::int64_t j = 0; j < D; ++j) yr[j] = (xr[j] - mu) * is * gv[j] + bv[j];
  }
  const bool rg = nodes_[x.id].requires_grad || nodes_[gamma.id].requires_grad ||
                  nodes_[beta.id].requires_grad;
  Var out = push(xs, std::move(out_v), rg);
  record(out, [this, x, gamma, beta, out, rows, D, mean, inv_std] {
    const auto& go = nodes_[out.id].grad;
    const auto& xv2 = nodes_[x.id].value;
    const auto& gv2 = nodes_[gamma.id].value;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xv2.data() + r * D;
      const T* gr = go.data() + r * D;
      const T mu = mean[r];
      const T is = inv_std[r];
      if (nodes_[gamma.id].requires_grad) {
        auto& gg = grad_buf(gamma);
        for (std::int64_t j = 0; j < D; ++j) gg[j] += gr[j] * (xr[j] - mu) * is;
      }
      if (nodes_[beta.id].requires_grad) {
        auto& gb = grad_buf(beta);
        for (std::int64_t j = 0; j < D; ++j) gb[j] += gr[j];
      }
      if (nodes_[x.id].requires_grad) {
        auto& gx = grad_buf(x);
        // dxhat accumulated through the two row reductions
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (std::int64_t j = 0; j < D; ++j) {
          const T dxhat = gr[j] * gv2[j];
          const T xhat = (xr[j] - mu) * is;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        T* gxr = gx.data() + r * D;
        const T invD = T(1) / static_cast<T>(D);
        for (std::int64_t j = 0; j < D; ++j) {
          const T dxhat = gr[j] * gv2[j];
          const T xhat = (xr[j] - mu) * is;
          gxr[j] += is * (dxhat - invD * sum_dxhat - xhat * invD * sum_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::l2_normalize_rows(Var x, T eps) {
  const Shape& xs = nodes_[x.id].shape;
  const std::int64_t D = xs.back();
  const std::int64_t rows = numel(xs) / D;
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  std::vector<T> inv_norm(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T s = T(0);
    for (std::int64_t j = 0; j < D; ++j) s += xr[j] * xr[j];
    const T in = T(1) / std::sqrt(s + eps);
    inv_norm[r] = in;
    T* yr = out_v.data() + r * D;
    for (std::int64_t j = 0; j < D; ++j) yr[j] = xr[j] * in;
  }
  Var out = push(xs, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, rows, D, inv_norm] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    const auto& yv = nodes_[out.id].value;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* yr = yv.data() + r * D;
      const T* gr = go.data() + r * D;
      T dot = T(0);
      for (std::int64_t j = 0; j < D; ++j) dot += gr[j] * yr[j];
      T* gxr = gx.data() + r * D;
      const T in = inv_norm[r];
      for (std::int64_t j = 0; j < D; ++j) gxr[j] += in * (gr[j] - yr[j] * dot);
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::gather_rows(Var x, std::vector<std::int64_t> idx) {
  const Shape& xs = nodes_[x.id].shape;
  if (xs.size() < 2) throw std::invalid_argument("gather_rows: input must have rank >= 2");
  const std::int64_t rows = xs[0];
  const std::int64_t D = numel(xs) / rows;
  for (auto i : idx)
    if (i < 0 || i >= rows)
      throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of " +
                              std::to_string(rows) + " rows");
  Shape out_shape = xs;
  out_shape[0] = static_cast<std::int64_t>(idx.size());
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(static_cast<std::size_t>(out_shape[0] * D));
  for (std::size_t m = 0; m < idx.size(); ++m)
    std::copy_n(xv.data() + idx[m] * D, D, out_v.data() + static_cast<std::int64_t>(m) * D);
  Var out = push(std::move(out_shape), std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, idx = std::move(idx), D] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t m = 0; m < idx.size(); ++m) {
      const T* gr = go.data() + static_cast<std::int64_t>(m) * D;
      T* gxr = gx.data() + idx[m] * D;
      for (std::int64_t j = 0; j < D; ++j) gxr[j] += gr[j];
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scatter_add_rows(Var x, std::vector<std::int64_t> idx,
                                                std::int64_t out_rows) {
  const Shape& xs = nodes_[x.id].shape;
  if (xs.size() < 2) throw std::invalid_argument("scatter_add_rows: input must have rank >= 2");
  if (static_cast<std::int64_t>(idx.size()) != xs[0])
    throw std::invalid_argument("scatter_add_rows: index count " + std::to_string(idx.size()) +
                                " != rows " + std::to_string(xs[0]));
  const std::int64_t D = numel(xs) / xs[0];
  for (auto i : idx)
    if (i < 0 || i >= out_rows) throw std::out_of_range("scatter_add_rows: index out of range");
  Shape out_shape = xs;
  out_shape[0] = out_rows;
  std::vector<T> out_v(static_cast<std::size_t>(out_rows * D), T(0));
  const auto& xv = nodes_[x.id].value;
  for (std::size_t m = 0; m < idx.size(); ++m) {
    const T* xr = xv.data() + static_cast<std::int64_t>(m) * D;
    T* orow = out_v.data() + idx[m] * D;
    for (std::int64_t j = 0; j < D; ++j) orow[j] += xr[j];
  }
  Var out = push(std::move(out_shape), std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, idx = std::move(idx), D] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t m = 0; m < idx.size(); ++m) {
      const T* gr = go.data() + idx[m] * D;
      T* gxr = gx.data() + static_cast<std::int64_t>(m) * D;
      for (std::int64_t j = 0; j < D; ++j) gxr[j] += gr[j];
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::masked_fill(Var x, std::vector<std::uint8_t> mask,
                                           Shape mask_shape, T fill) {
  if (static_cast<std::int64_t>(mask.size()) != numel(mask_shape))
    throw std::invalid_argument("masked_fill: mask length does not match its shape");
  const Shape& xs = nodes_[x.id].shape;
  const BroadcastIndex bi = make_bindex("masked_fill", xs, mask_shape);
  const auto& xv = nodes_[x.id].value;
  std::vector<T> out_v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out_v[i] = mask[bi(static_cast<std::int64_t>(i))] ? fill : xv[i];
  Var out = push(xs, std::move(out_v), nodes_[x.id].requires_grad);
  record(out, [this, x, out, mask = std::move(mask), bi] {
    auto& gx = grad_buf(x);
    const auto& go = nodes_[out.id].grad;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!mask[bi(static_cast<std::int64_t>(i))]) gx[i] += go[i];
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat_last(Var a, Var b) {
  const Shape& as = nodes_[a.id].shape;
  const Shape& bs = nodes_[b.id].shape;
  if (as.size() != bs.size() || as.empty()) shape_error("concat_last", as, bs);
  for (std::size_t i = 0; i + 1 < as.size(); ++i)
    if (as[i] != bs[i]) shape_error("concat_last", as, bs);
  const std::int64_t Da = as.back(), Db = bs.back();
  const std::int64_t rows = numel(as) / Da;
  Shape out_shape = as;
  out_shape.back() = Da + Db;
  std::vector<T> out_v(static_cast<std::size_t>(rows * (Da + Db)));
  const auto& av = nodes_[a.id].value;
  const auto& bv = nodes_[b.id].value;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * Da, Da, out_v.data() + r * (Da + Db));
    std::copy_n(bv.data() + r * Db, Db, out_v.data() + r * (Da + Db) + Da);
  }
  Var out = push(std::move(out_shape), std::move(out_v),
                 nodes_[a.id].requires_grad || nodes_[b.id].requires_grad);
  record(out, [this, a, b, out, rows, Da, Db] {
    const auto& go = nodes_[out.id].grad;
    if (nodes_[a.id].requires_grad) {
      auto& ga = grad_buf(a);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < Da; ++j) ga[r * Da + j] += go[r * (Da + Db) + j];
    }
    if (nodes_[b.id].requires_grad) {
      auto& gb = grad_buf(b);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < Db; ++j) gb[r * Db + j] += go[r * (Da + Db) + Da + j];
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sum_all(Var x) {
  const auto& xv = nodes_[x.id].value;
  T s = T(0);
  for (const T v : xv) s += v;
  Var out = push({1}, {s}, nodes_[x.id].requires_grad);
  record(out, [this, x, out] {
    auto& gx = grad_buf(x);
    const T g = nodes_[out.id].grad[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mean_all(Var x) {
  const std::int64_t n = numel(nodes_[x.id].shape);
  return scale(sum_all(x), T(1) / static_cast<T>(n));
}

template <typename T>
typename Tape<T>::Var Tape<T>::cross_entropy_rows(Var logits, std::vector<std::int32_t> labels,
                                                  std::vector<T> row_weight, T inv_denom) {
  const Shape& ls = nodes_[logits.id].shape;
  if (ls.size() != 2) throw std::invalid_argument("cross_entropy_rows: logits must be (N, C)");
  const std::int64_t N = ls[0], C = ls[1];
  if (static_cast<std::int64_t>(labels.size()) != N ||
      static_cast<std::int64_t>(row_weight.size()) != N)
    throw std::invalid_argument("cross_entropy_rows: labels/weights length != rows");
  const auto& lv = nodes_[logits.id].value;
  double loss = 0.0;
  for (std::int64_t r = 0; r < N; ++r) {
    if (row_weight[r] == T(0)) continue;
    const std::int32_t lab = labels[r];
    if (lab < 0 || lab >= C)
      throw std::out_of_range("cross_entropy_rows: label " + std::to_string(lab) +
                              " out of range [0," + std::to_string(C) + ")");
    const T* xr = lv.data() + r * C;
    T m = xr[0];
    for (std::int64_t j = 1; j < C; ++j) m = std::max(m, xr[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < C; ++j) s += std::exp(static_cast<double>(xr[j] - m));
    const double lse = static_cast<double>(m) + std::log(s);
    loss += static_cast<double>(row_weight[r]) * (lse - static_cast<double>(xr[lab]));
  }
  Var out = push({1}, {static_cast<T>(loss * static_cast<double>(inv_denom))},
                 nodes_[logits.id].requires_grad);
  record(out, [this, logits, out, labels = std::move(labels), row_weight = std::move(row_weight),
               inv_denom, N, C] {
    auto& gx = grad_buf(logits);
    const T g = nodes_[out.id].grad[0];
    const auto& lv2 = nodes_[logits.id].value;
    for (std::int64_t r = 0; r < N; ++r) {
      if (row_weight[r] == T(0)) continue;
      const T* xr = lv2.data() + r * C;
      T m = xr[0];
      for (std::int64_t j = 1; j < C; ++j) m = std::max(m, xr[j]);
      T s = T(0);
      for (std::int64_t j = 0; j < C; ++j) s += std::exp(xr[j] - m);
      const T f = g * inv_denom * row_weight[r];
      T* gxr = gx.data() + r * C;
      for (std::int64_t j = 0; j < C; ++j) {
        T p = std::exp(xr[j] - m) / s;
        if (j == labels[r]) p -= T(1);
        gxr[j] += f * p;
      }
    }
  });
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::linear(Var x, Var w, Var b) {
  return add(matmul(x, w), b);
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (!loss.ok() || numel(nodes_[loss.id].shape) != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!nodes_[loss.id].requires_grad)
    throw std::invalid_argument("backward: loss is not connected to any tracked input");
  grad_buf(loss)[0] = T(1);
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backprop && !n.grad.empty()) n.backprop();
  }
}

template <typename T>
typename Tape<T>::Var cosine_attention(Tape<T>& tape, typename Tape<T>::Var q,
                                       typename Tape<T>::Var k, typename Tape<T>::Var v,
                                       typename Tape<T>::Var tau, typename Tape<T>::Var bias,
                                       const std::vector<std::uint8_t>& blocked, T tau_min) {
  const Shape& qs = tape.shape(q);
  if (qs.size() != 4 || tape.shape(k) != qs || tape.shape(v) != qs)
    throw std::invalid_argument("cosine_attention: q, k, v must share shape (W, H, S, D)");
  const std::int64_t W = qs[0], H = qs[1], S = qs[2];
  if (tape.shape(tau) != Shape{H})
    throw std::invalid_argument("cosine_attention: tau must have shape (heads)");
  for (const T t : tape.value(tau))
    if (!(t >= tau_min))
      throw std::invalid_argument("cosine_attention: tau below floor " + std::to_string(tau_min));
  if (tape.shape(bias) != Shape{H, S, S})
    throw std::invalid_argument("cosine_attention: bias must have shape (heads, S, S)");
  if (!blocked.empty() && static_cast<std::int64_t>(blocked.size()) != W * S * S)
    throw std::invalid_argument("cosine_attention: mask shape mismatch");

  auto qn = tape.l2_normalize_rows(q);
  auto kn = tape.l2_normalize_rows(k);
  auto scores = tape.matmul(qn, tape.permute(kn, {0, 1, 3, 2}));  // (W, H, S, S)
  auto inv_tau = tape.reciprocal(tape.reshape(tau, {H, 1, 1}));
  scores = tape.mul(scores, inv_tau);
  scores = tape.add(scores, bias);
  if (!blocked.empty())
    scores = tape.masked_fill(scores, blocked, {W, 1, S, S},
                              -std::numeric_limits<T>::infinity());
  return tape.matmul(tape.softmax_rows(scores), v);
}

template <typename T>
std::int64_t ParamStore<T>::add(std::string name, Array<T> init) {
  if (index_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  Entry e;
  e.name = std::move(name);
  e.m = Array<T>::zeros(init.shape);
  e.v = Array<T>::zeros(init.shape);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  const auto id = static_cast<std::int64_t>(entries_.size()) - 1;
  index_.emplace(entries_.back().name, id);
  return id;
}

template <typename T>
std::int64_t ParamStore<T>::total_parameters() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += numel(e.value.shape);
  return n;
}

template <typename T>
std::int64_t ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
void ParamStore<T>::adamw_step(const std::vector<std::vector<T>>& grads, const AdamConfig& cfg) {
  if (grads.size() != entries_.size())
    throw std::invalid_argument("adamw_step: expected " + std::to_string(entries_.size()) +
                                " gradient buffers, got " + std::to_string(grads.size()));
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (std::size_t e = 0; e < entries_.size(); ++e) {
    Entry& ent = entries_[e];
    const std::size_t n = ent.value.v.size();
    if (!grads[e].empty() && grads[e].size() != n)
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " + ent.name);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grads[e].empty() ? 0.0 : static_cast<double>(grads[e][i]);
      double m = cfg.beta1 * static_cast<double>(ent.m.v[i]) + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * static_cast<double>(ent.v.v[i]) + (1.0 - cfg.beta2) * g * g;
      ent.m.v[i] = static_cast<T>(m);
      ent.v.v[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double p = static_cast<double>(ent.value.v[i]);
      ent.value.v[i] =
          static_cast<T>(p - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p));
    }
  }
}

template class Tape<float>;
template class Tape<double>;
template class ParamStore<float>;
template class ParamStore<double>;

template Tape<float>::Var cosine_attention<float>(Tape<float>&, Tape<float>::Var, Tape<float>::Var,
                                                  Tape<float>::Var, Tape<float>::Var,
                                                  Tape<float>::Var,
                                                  const std::vector<std::uint8_t>&, float);
template Tape<double>::Var cosine_attention<double>(Tape<double>&, Tape<double>::Var,
                                                    Tape<double>::Var, Tape<double>::Var,
                                                    Tape<double>::Var, Tape<double>::Var,
                                                    const std::vector<std::uint8_t>&, double);

}  // namespace healswin::ad
