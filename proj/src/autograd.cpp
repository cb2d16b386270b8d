#include "cytocap/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "cytocap/simd.hpp"

namespace cytocap {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::param(const Param<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return {this, id};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  return n.param ? n.param->value : n.owned;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw StateError("op inputs belong to a different tape");
      if (nodes_[in.id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad(Var<T> v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (nodes_.empty() || loss.tape != this || loss.id >= nodes_.size()) {
    throw StateError("backward called before any forward pass was recorded");
  }
  if (backward_done_) throw StateError("backward already ran on this tape");
  if (value(loss).size() != 1) throw ShapeError("backward expects a scalar loss, got " + shape_str(value(loss).shape()));
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
Gradients<T> Tape<T>::param_grads() const {
  Gradients<T> out;
  for (const auto& [p, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    out.emplace(p->name, n.grad.empty() ? Tensor<T>(p->value.shape()) : n.grad);
  }
  return out;
}

template <typename T>
const Tensor<T>* Tape<T>::param_grad(const Param<T>& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  if (!n.requires_grad || n.grad.empty()) return nullptr;
  return &n.grad;
}

template class Tape<float>;
template class Tape<double>;

namespace ops {
namespace {

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool acc) {
  simd::gemm(m, n, k, a, k, b, n, c, n, acc);
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool acc) {
  std::vector<T> bt(k * n);
  transpose(b, n, k, bt.data());
  simd::gemm(m, n, k, a, k, bt.data(), n, c, n, acc);
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool acc) {
  std::vector<T> at(m * k);
  transpose(a, m, k, at.data());
  simd::gemm(k, n, m, at.data(), m, b, n, c, n, acc);
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = T(0.044715);

// Softmax of one row in place; returns log-sum-exp.
template <typename T>
T softmax_inplace(T* row, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  T s = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    s += row[j];
  }
  const T inv = T(1) / s;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  return mx + std::log(s);
}

template <typename T>
void check_ce_args(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                   std::span<const std::uint8_t> mask) {
  require_rank2(logits, "masked_cross_entropy");
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
    throw ShapeError("masked_cross_entropy: " + std::to_string(logits.rows()) + " logit rows, " +
                     std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logits.cols()) {
      throw ShapeError("masked_cross_entropy: target id " + std::to_string(targets[i]) + " out of range");
    }
  }
  if (count == 0) throw EmptyLossError();
}

struct AttentionDims {
  std::size_t lq, lk, d, heads, dh;
};

template <typename T>
AttentionDims attention_dims(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                             std::size_t heads) {
  require_rank2(q, "attention q");
  require_rank2(k, "attention k");
  require_rank2(v, "attention v");
  if (k.shape() != v.shape()) throw ShapeError("attention: k and v shapes differ");
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query dim " + std::to_string(q.cols()) + " != key dim " + std::to_string(k.cols()));
  }
  if (heads == 0 || q.cols() % heads != 0) throw ShapeError("attention: model dim not divisible by head count");
  if (causal && q.rows() != k.rows()) throw ShapeError("attention: causal mask needs equal query/key lengths");
  return {q.rows(), k.rows(), q.cols(), heads, q.cols() / heads};
}

template <typename T>
void copy_head(const Tensor<T>& src, std::size_t head, std::size_t dh, std::vector<T>& dst) {
  const std::size_t rows = src.rows(), cols = src.cols();
  dst.resize(rows * dh);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(src.data() + r * cols + head * dh, dh, dst.data() + r * dh);
}

template <typename T>
void add_head(Tensor<T>& dst, std::size_t head, std::size_t dh, const std::vector<T>& src) {
  const std::size_t rows = dst.rows(), cols = dst.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T* out = dst.data() + r * cols + head * dh;
    const T* in = src.data() + r * dh;
    for (std::size_t c = 0; c < dh; ++c) out[c] += in[c];
  }
}

// Forward pass shared by the tensor and Var overloads; probs (per head,
// [Lq, Lk]) are kept for the backward pass when requested.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                            std::size_t heads, std::vector<std::vector<T>>* probs_out) {
  const AttentionDims dims = attention_dims(q, k, v, causal, heads);
  const T scale = T(1) / std::sqrt(static_cast<T>(dims.dh));
  Tensor<T> out({dims.lq, dims.d});
  std::vector<T> qh, kh, vh, oh(dims.lq * dims.dh);
  if (probs_out) probs_out->assign(heads, {});
  for (std::size_t h = 0; h < heads; ++h) {
    copy_head(q, h, dims.dh, qh);
    copy_head(k, h, dims.dh, kh);
    copy_head(v, h, dims.dh, vh);
    std::vector<T> p(dims.lq * dims.lk);
    gemm_nt(qh.data(), kh.data(), p.data(), dims.lq, dims.dh, dims.lk, false);
    for (std::size_t i = 0; i < dims.lq; ++i) {
      T* row = p.data() + i * dims.lk;
      const std::size_t visible = causal ? i + 1 : dims.lk;
      for (std::size_t j = 0; j < visible; ++j) row[j] *= scale;
      softmax_inplace(row, visible);
      for (std::size_t j = visible; j < dims.lk; ++j) row[j] = T(0);
    }
    gemm_nn(p.data(), vh.data(), oh.data(), dims.lq, dims.lk, dims.dh, false);
    for (std::size_t r = 0; r < dims.lq; ++r)
      std::copy_n(oh.data() + r * dims.dh, dims.dh, out.data() + r * dims.d + h * dims.dh);
    if (probs_out) (*probs_out)[h] = std::move(p);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor kernels

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v)));
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm: last axis " + std::to_string(n) + " vs gamma/beta " + std::to_string(gamma.size()) +
                     "/" + std::to_string(beta.size()));
  }
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * n;
    T* out = y.data() + r * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[j] = (in[j] - mean) * rstd * gamma[j] + beta[j];
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.data() + r * y.cols(), y.cols());
  return y;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal, std::size_t num_heads) {
  return attention_forward<T>(q, k, v, causal, num_heads, nullptr);
}

template <typename T>
T masked_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                       std::span<const std::uint8_t> loss_mask) {
  check_ce_args(logits, targets, loss_mask);
  std::vector<T> row(logits.cols());
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!loss_mask[i]) continue;
    std::copy_n(logits.data() + i * logits.cols(), logits.cols(), row.data());
    const T target_logit = row[static_cast<std::size_t>(targets[i])];
    total += softmax_inplace(row.data(), row.size()) - target_logit;
    ++count;
  }
  return total / static_cast<T>(count);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> c({a.rows(), b.cols()});
  gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = matmul(a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (t.requires_grad(a)) gemm_nt(g.data(), bv.data(), t.grad(a).data(), m, n, k, true);
    if (t.requires_grad(b)) gemm_tn(av.data(), g.data(), t.grad(b).data(), m, k, n, true);
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  if (bv.size() != wv.cols()) throw ShapeError("linear: bias length does not match output dim");
  Tensor<T> out = matmul(x.value(), wv);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* row = out.data() + r * out.cols();
    for (std::size_t c = 0; c < out.cols(); ++c) row[c] += bv[c];
  }
  return tape.record(std::move(out), {x, w, bias}, [x, w, bias](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv2 = t.value(w);
    const std::size_t m = xv.rows(), k = xv.cols(), n = wv2.cols();
    if (t.requires_grad(x)) gemm_nt(g.data(), wv2.data(), t.grad(x).data(), m, n, k, true);
    if (t.requires_grad(w)) gemm_tn(xv.data(), g.data(), t.grad(w).data(), m, k, n, true);
    if (t.requires_grad(bias)) {
      Tensor<T>& gb = t.grad(bias);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
  return matmul(x, w);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (Var<T> in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      Tensor<T>& gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv2 = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape<T>& t, const Tensor<T>& g) {
    simd::axpy(factor, g.data(), t.grad(x).data(), g.size());
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return x.tape->record(gelu(x.value()), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
      const T d = T(0.5) * (T(1) + th) +
                  T(0.5) * v * (T(1) - th * th) * kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
      gx[i] += g[i] * d;
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  Tensor<T> out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  return x.tape->record(std::move(out), {x, gamma, beta}, [x, gamma, beta, eps](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& gm = t.value(gamma);
    const std::size_t n = xv.cols();
    const bool need_x = t.requires_grad(x), need_g = t.requires_grad(gamma), need_b = t.requires_grad(beta);
    std::vector<T> xhat(n), dxhat(n);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const T* in = xv.data() + r * n;
      const T* gr = g.data() + r * n;
      T mean = T(0);
      for (std::size_t j = 0; j < n; ++j) mean += in[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
      var /= static_cast<T>(n);
      const T rstd = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) xhat[j] = (in[j] - mean) * rstd;
      if (need_g) {
        Tensor<T>& gg = t.grad(gamma);
        for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xhat[j];
      }
      if (need_b) {
        Tensor<T>& gb = t.grad(beta);
        for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
      }
      if (need_x) {
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          dxhat[j] = gr[j] * gm[j];
          mean_d += dxhat[j];
          mean_dx += dxhat[j] * xhat[j];
        }
        mean_d /= static_cast<T>(n);
        mean_dx /= static_cast<T>(n);
        T* gx = t.grad(x).data() + r * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
      }
    }
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, bool causal, std::size_t num_heads) {
  Tape<T>& tape = *q.tape;
  const bool keep = tape.grad_enabled() &&
                    (tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v));
  auto probs = std::make_shared<std::vector<std::vector<T>>>();
  Tensor<T> out = attention_forward(q.value(), k.value(), v.value(), causal, num_heads, keep ? probs.get() : nullptr);
  return tape.record(std::move(out), {q, k, v}, [q, k, v, num_heads, probs](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& qv = t.value(q);
    const Tensor<T>& kv = t.value(k);
    const Tensor<T>& vv = t.value(v);
    const std::size_t lq = qv.rows(), lk = kv.rows(), dh = qv.cols() / num_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const bool nq = t.requires_grad(q), nk = t.requires_grad(k), nv = t.requires_grad(v);
    std::vector<T> qh, kh, vh, gh, dp(lq * lk), tmp;
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::vector<T>& p = (*probs)[h];
      copy_head(g, h, dh, gh);
      copy_head(vv, h, dh, vh);
      if (nv) {
        tmp.assign(lk * dh, T(0));
        gemm_tn(p.data(), gh.data(), tmp.data(), lq, lk, dh, false);
        add_head(t.grad(v), h, dh, tmp);
      }
      if (!nq && !nk) continue;
      // dS = P o (dP - rowsum(dP o P)), scaled by 1/sqrt(dh)
      gemm_nt(gh.data(), vh.data(), dp.data(), lq, dh, lk, false);
      for (std::size_t i = 0; i < lq; ++i) {
        T* dr = dp.data() + i * lk;
        const T* pr = p.data() + i * lk;
        T s = T(0);
        for (std::size_t j = 0; j < lk; ++j) s += dr[j] * pr[j];
        for (std::size_t j = 0; j < lk; ++j) dr[j] = pr[j] * (dr[j] - s) * scale;
      }
      if (nq) {
        copy_head(kv, h, dh, kh);
        tmp.assign(lq * dh, T(0));
        gemm_nn(dp.data(), kh.data(), tmp.data(), lq, lk, dh, false);
        add_head(t.grad(q), h, dh, tmp);
      }
      if (nk) {
        copy_head(qv, h, dh, qh);
        tmp.assign(lk * dh, T(0));
        gemm_tn(dp.data(), qh.data(), tmp.data(), lq, lk, dh, false);
        add_head(t.grad(k), h, dh, tmp);
      }
    }
  });
}

template <typename T>
Var<T> gated_residual(Var<T> h, Var<T> gate, Var<T> x) {
  require_same_shape(h.value(), x.value(), "gated_residual");
  if (gate.value().size() != 1) throw ShapeError("gated_residual: gate must hold a single value");
  const T tg = std::tanh(gate.value()[0]);
  Tensor<T> out = h.value();
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tg * xv[i];
  return h.tape->record(std::move(out), {h, gate, x}, [h, gate, x, tg](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(h)) {
      Tensor<T>& gh = t.grad(h);
      for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
    }
    if (t.requires_grad(x)) simd::axpy(tg, g.data(), t.grad(x).data(), g.size());
    if (t.requires_grad(gate)) {
      const Tensor<T>& xv2 = t.value(x);
      t.grad(gate)[0] += (T(1) - tg * tg) * simd::dot(g.data(), xv2.data(), g.size());
    }
  });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const Tensor<T>& tv = table.value();
  require_rank2(tv, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t d = tv.cols();
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, saved = std::move(saved), d](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gt = t.grad(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* row = gt.data() + static_cast<std::size_t>(saved[i]) * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += g[i * d + c];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s = T(0);
  for (T v : x.value().values()) s += v;
  return x.tape->record(Tensor<T>({1}, {s}), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(x);
    for (auto& v : gx.values()) v += g[0];
  });
}

template <typename T>
Var<T> sum_squares(Var<T> x) {
  T s = T(0);
  for (T v : x.value().values()) s += v * v;
  return x.tape->record(Tensor<T>({1}, {s}), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += T(2) * xv[i] * g[0];
  });
}

template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> loss_mask) {
  const Tensor<T>& lv = logits.value();
  check_ce_args(lv, targets, loss_mask);
  const std::size_t v = lv.cols();
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(loss_mask.begin(), loss_mask.end());
  auto probs = std::make_shared<Tensor<T>>(lv.shape());
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    if (!mk[i]) continue;
    T* row = probs->data() + i * v;
    std::copy_n(lv.data() + i * v, v, row);
    const T target_logit = row[static_cast<std::size_t>(tg[i])];
    total += softmax_inplace(row, v) - target_logit;
    ++count;
  }
  const T inv = T(1) / static_cast<T>(count);
  return logits.tape->record(
      Tensor<T>({1}, {total * inv}), {logits},
      [logits, tg = std::move(tg), mk = std::move(mk), probs, inv, v](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gl = t.grad(logits);
        const T s = g[0] * inv;
        for (std::size_t i = 0; i < mk.size(); ++i) {
          if (!mk[i]) continue;
          const T* pr = probs->data() + i * v;
          T* gr = gl.data() + i * v;
          for (std::size_t j = 0; j < v; ++j) gr[j] += s * pr[j];
          gr[static_cast<std::size_t>(tg[i])] -= s;
        }
      });
}

#define CYTOCAP_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                    \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                         \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool, std::size_t);     \
  template T masked_cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, std::span<const std::uint8_t>); \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                                                    \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                            \
  template Var<T> linear(Var<T>, Var<T>);                                                                    \
  template Var<T> add(Var<T>, Var<T>);                                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                                       \
  template Var<T> scale(Var<T>, T);                                                                          \
  template Var<T> gelu(Var<T>);                                                                              \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                     \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, bool, std::size_t);                                      \
  template Var<T> gated_residual(Var<T>, Var<T>, Var<T>);                                                    \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                                          \
  template Var<T> reshape(Var<T>, Shape);                                                                    \
  template Var<T> sum(Var<T>);                                                                               \
  template Var<T> sum_squares(Var<T>);                                                                       \
  template Var<T> masked_cross_entropy(Var<T>, std::span<const std::int32_t>, std::span<const std::uint8_t>);

CYTOCAP_INSTANTIATE_OPS(float)
CYTOCAP_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace cytocap
