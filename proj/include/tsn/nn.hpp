#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tsn/rng.hpp"
#include "tsn/tensor.hpp"

namespace tsn {

// A named parameter tensor. Tensors flagged `tsn` carry the sparse-subnet
// state: a score tensor of identical shape, per-task binary masks, and the
// occupancy mask (OR of all task masks). A null active_mask means dense
// forward (baselines and freshly spawned copies before allocation).
struct ParamTensor {
  std::string name;
  bool tsn = false;
  Tensor value, grad;
  Tensor scores, score_grad;
  std::map<int, MaskVec> task_masks;
  MaskVec occupancy;
  const MaskVec* active_mask = nullptr;
  bool train_scores = false;
  Tensor effective_scratch;

  void init(std::string n, std::vector<int64_t> shape, bool is_tsn) {
    name = std::move(n);
    tsn = is_tsn;
    value = Tensor(shape);
    grad = Tensor(shape);
    if (tsn) {
      scores = Tensor(shape);
      score_grad = Tensor(shape);
      occupancy.assign(static_cast<size_t>(value.numel()), 0);
      effective_scratch = Tensor(shape);
    }
  }

  bool masked() const { return tsn && active_mask != nullptr; }

  // Weights as seen by the forward pass: M ⊙ W when a task mask is active.
  const Tensor& forward_value() {
    if (!masked()) return value;
    const MaskVec& m = *active_mask;
    for (int64_t i = 0; i < value.numel(); ++i)
      effective_scratch.data[static_cast<size_t>(i)] =
          m[static_cast<size_t>(i)] ? value.data[static_cast<size_t>(i)] : 0.0;
    return effective_scratch;
  }

  // Routes the gradient w.r.t. the effective weights back onto the dense
  // weights (chain rule through M ⊙ W) and, when score training is on, onto
  // the scores via the straight-through product rule.
  void accumulate_effective_grad(const double* g_eff) {
    const int64_t n = value.numel();
    if (!masked()) {
      for (int64_t i = 0; i < n; ++i) grad.data[static_cast<size_t>(i)] += g_eff[i];
      return;
    }
    const MaskVec& m = *active_mask;
    for (int64_t i = 0; i < n; ++i)
      if (m[static_cast<size_t>(i)]) grad.data[static_cast<size_t>(i)] += g_eff[i];
    if (train_scores) {
      for (int64_t i = 0; i < n; ++i)
        score_grad.data[static_cast<size_t>(i)] += g_eff[i] * value.data[static_cast<size_t>(i)];
    }
  }

  void zero_grads() {
    grad.fill(0.0);
    if (tsn) score_grad.fill(0.0);
  }

  void recompute_occupancy() {
    occupancy.assign(static_cast<size_t>(value.numel()), 0);
    for (const auto& [task, mask] : task_masks)
      for (size_t i = 0; i < mask.size(); ++i) occupancy[i] |= mask[i];
  }

  // Occupancy contributed by tasks earlier than `task` (the protection set
  // during that task's own training).
  MaskVec prior_occupancy(int task) const {
    MaskVec prior(static_cast<size_t>(value.numel()), 0);
    for (const auto& [t, mask] : task_masks) {
      if (t >= task) continue;
      for (size_t i = 0; i < mask.size(); ++i) prior[i] |= mask[i];
    }
    return prior;
  }
};

inline void init_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& v : t.data) v = rng.normal(0.0, stddev);
}

inline void init_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

// y = x·Wᵀ + b over row-major [n, in] inputs.
class Linear {
 public:
  ParamTensor weight;  // [out, in]
  ParamTensor bias;    // [out]
  int in_dim = 0, out_dim = 0;

  void init(const std::string& name, int out, int in, bool is_tsn, Rng& rng) {
    in_dim = in;
    out_dim = out;
    weight.init(name + ".weight", {out, in}, is_tsn);
    bias.init(name + ".bias", {out}, is_tsn);
    init_normal(weight.value, rng, 0.02);
  }

  void forward(const double* x, int64_t n, double* y) {
    ConstMapMat xm(x, n, in_dim);
    MapMat ym(y, n, out_dim);
    const Tensor& w = weight.forward_value();
    const Tensor& b = bias.forward_value();
    ym.noalias() = xm * ConstMapMat(w.ptr(), out_dim, in_dim).transpose();
    ym.rowwise() += ConstMapVec(b.ptr(), out_dim).transpose();
  }

  // dx may be null when the input gradient is not needed (leaf inputs).
  void backward(const double* x, int64_t n, const double* dy, double* dx) {
    ConstMapMat xm(x, n, in_dim);
    ConstMapMat dym(dy, n, out_dim);
    scratch_w_.assign(static_cast<size_t>(out_dim) * in_dim, 0.0);
    scratch_b_.assign(static_cast<size_t>(out_dim), 0.0);
    MapMat dwm(scratch_w_.data(), out_dim, in_dim);
    dwm.noalias() = dym.transpose() * xm;
    MapVec(scratch_b_.data(), out_dim).noalias() = dym.colwise().sum().transpose();
    weight.accumulate_effective_grad(scratch_w_.data());
    bias.accumulate_effective_grad(scratch_b_.data());
    if (dx) {
      const Tensor& w = weight.forward_value();
      MapMat dxm(dx, n, in_dim);
      dxm.noalias() = dym * ConstMapMat(w.ptr(), out_dim, in_dim);
    }
  }

 private:
  std::vector<double> scratch_w_, scratch_b_;
};

// Row lookup table [rows, dim]; non-TSN by construction site choice.
class Embedding {
 public:
  ParamTensor table;  // [rows, dim]
  int rows = 0, dim = 0;

  void init(const std::string& name, int r, int d, bool is_tsn, Rng& rng) {
    rows = r;
    dim = d;
    table.init(name + ".table", {r, d}, is_tsn);
    init_normal(table.value, rng, 0.02);
  }

  void forward(const int* indices, int64_t n, double* y) const {
    for (int64_t i = 0; i < n; ++i) {
      const double* src = table.value.ptr() + static_cast<int64_t>(indices[i]) * dim;
      std::copy(src, src + dim, y + i * dim);
    }
  }

  void backward(const int* indices, int64_t n, const double* dy) {
    for (int64_t i = 0; i < n; ++i) {
      double* dst = table.grad.ptr() + static_cast<int64_t>(indices[i]) * dim;
      const double* src = dy + i * dim;
      for (int d = 0; d < dim; ++d) dst[d] += src[d];
    }
  }
};

// LayerNorm over the last dimension.
class LayerNorm {
 public:
  ParamTensor gain, shift;
  int dim = 0;
  static constexpr double kEps = 1e-5;

  void init(const std::string& name, int d) {
    dim = d;
    gain.init(name + ".gain", {d}, false);
    shift.init(name + ".shift", {d}, false);
    gain.value.fill(1.0);
  }

  void forward(const double* x, int64_t n, double* y) {
    xhat_.assign(static_cast<size_t>(n) * dim, 0.0);
    rstd_.assign(static_cast<size_t>(n), 0.0);
    const double* g = gain.value.ptr();
    const double* b = shift.value.ptr();
    for (int64_t i = 0; i < n; ++i) {
      const double* xi = x + i * dim;
      double mean = 0.0;
      for (int d = 0; d < dim; ++d) mean += xi[d];
      mean /= dim;
      double var = 0.0;
      for (int d = 0; d < dim; ++d) var += (xi[d] - mean) * (xi[d] - mean);
      var /= dim;
      const double rstd = 1.0 / std::sqrt(var + kEps);
      rstd_[static_cast<size_t>(i)] = rstd;
      double* xh = xhat_.data() + i * dim;
      double* yi = y + i * dim;
      for (int d = 0; d < dim; ++d) {
        xh[d] = (xi[d] - mean) * rstd;
        yi[d] = xh[d] * g[d] + b[d];
      }
    }
  }

  void backward(int64_t n, const double* dy, double* dx) {
    const double* g = gain.value.ptr();
    double* dg = gain.grad.ptr();
    double* db = shift.grad.ptr();
    for (int64_t i = 0; i < n; ++i) {
      const double* dyi = dy + i * dim;
      const double* xh = xhat_.data() + i * dim;
      double* dxi = dx + i * dim;
      double sum_dyg = 0.0, sum_dyg_xh = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double dyg = dyi[d] * g[d];
        sum_dyg += dyg;
        sum_dyg_xh += dyg * xh[d];
        dg[d] += dyi[d] * xh[d];
        db[d] += dyi[d];
      }
      const double inv_n = 1.0 / dim;
      const double rstd = rstd_[static_cast<size_t>(i)];
      for (int d = 0; d < dim; ++d) {
        const double dyg = dyi[d] * g[d];
        dxi[d] = rstd * (dyg - inv_n * sum_dyg - xh[d] * inv_n * sum_dyg_xh);
      }
    }
  }

 private:
  std::vector<double> xhat_;
  std::vector<double> rstd_;
};

inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double inner = k * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

// Inverted dropout; the mask stream comes from the caller-owned RNG so the
// whole training session is reproducible from one seed.
class Dropout {
 public:
  void forward(const double* x, int64_t n, double rate, bool train, Rng* rng, double* y) {
    if (!train || rate <= 0.0) {
      active_ = false;
      std::copy(x, x + n, y);
      return;
    }
    active_ = true;
    scale_ = 1.0 / (1.0 - rate);
    mask_.assign(static_cast<size_t>(n), 1);
    for (int64_t i = 0; i < n; ++i) {
      if (rng->uniform() < rate) {
        mask_[static_cast<size_t>(i)] = 0;
        y[i] = 0.0;
      } else {
        y[i] = x[i] * scale_;
      }
    }
  }

  void backward(const double* dy, int64_t n, double* dx) const {
    if (!active_) {
      std::copy(dy, dy + n, dx);
      return;
    }
    for (int64_t i = 0; i < n; ++i)
      dx[i] = mask_[static_cast<size_t>(i)] ? dy[i] * scale_ : 0.0;
  }

 private:
  bool active_ = false;
  double scale_ = 1.0;
  MaskVec mask_;
};

// Multi-head causal self-attention over [B, T, H] flats. Softmax rows are
// computed over the causal prefix only, so outputs at position i never touch
// tokens at positions > i.
class CausalSelfAttention {
 public:
  Linear qkv;   // H -> 3H
  Linear proj;  // H -> H
  int n_heads = 0, head_dim = 0, embed_dim = 0;

  void init(const std::string& name, int heads, int h, bool is_tsn, Rng& rng) {
    n_heads = heads;
    embed_dim = h;
    head_dim = h / heads;
    qkv.init(name + ".qkv", 3 * h, h, is_tsn, rng);
    proj.init(name + ".proj", h, h, is_tsn, rng);
  }

  void forward(const double* x, int batch, int tokens, double* y) {
    const int h = embed_dim, hs = head_dim;
    const int64_t n = static_cast<int64_t>(batch) * tokens;
    qkv_out_.assign(static_cast<size_t>(n) * 3 * h, 0.0);
    probs_.assign(static_cast<size_t>(batch) * n_heads * tokens * tokens, 0.0);
    att_.assign(static_cast<size_t>(n) * h, 0.0);
    qkv.forward(x, n, qkv_out_.data());

    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    using StridedMap = Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>>;
    for (int b = 0; b < batch; ++b) {
      double* base = qkv_out_.data() + static_cast<int64_t>(b) * tokens * 3 * h;
      for (int head = 0; head < n_heads; ++head) {
        StridedMap q(base + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap k(base + h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap v(base + 2 * h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        MapMat p(probs_.data() +
                     (static_cast<int64_t>(b) * n_heads + head) * tokens * tokens,
                 tokens, tokens);
        StridedMap a(att_.data() + static_cast<int64_t>(b) * tokens * h + head * hs,
                     tokens, hs, Eigen::OuterStride<>(h));
        for (int i = 0; i < tokens; ++i) {
          auto row = p.row(i).head(i + 1);
          row.noalias() = (q.row(i) * k.topRows(i + 1).transpose()) * scale;
          const double mx = row.maxCoeff();
          row = (row.array() - mx).exp();
          row /= row.sum();
          a.row(i).noalias() = row * v.topRows(i + 1);
        }
      }
    }
    proj.forward(att_.data(), n, y);
  }

  void backward(const double* x, int batch, int tokens, const double* dy, double* dx) {
    const int h = embed_dim, hs = head_dim;
    const int64_t n = static_cast<int64_t>(batch) * tokens;
    datt_.assign(static_cast<size_t>(n) * h, 0.0);
    dqkv_.assign(static_cast<size_t>(n) * 3 * h, 0.0);
    proj.backward(att_.data(), n, dy, datt_.data());

    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    using StridedMap = Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>>;
    for (int b = 0; b < batch; ++b) {
      double* base = qkv_out_.data() + static_cast<int64_t>(b) * tokens * 3 * h;
      double* dbase = dqkv_.data() + static_cast<int64_t>(b) * tokens * 3 * h;
      for (int head = 0; head < n_heads; ++head) {
        StridedMap q(base + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap k(base + h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap v(base + 2 * h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap dq(dbase + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap dk(dbase + h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        StridedMap dv(dbase + 2 * h + head * hs, tokens, hs, Eigen::OuterStride<>(3 * h));
        MapMat p(probs_.data() +
                     (static_cast<int64_t>(b) * n_heads + head) * tokens * tokens,
                 tokens, tokens);
        StridedMap da(datt_.data() + static_cast<int64_t>(b) * tokens * h + head * hs,
                      tokens, hs, Eigen::OuterStride<>(h));
        for (int i = tokens - 1; i >= 0; --i) {
          Eigen::RowVectorXd dp = da.row(i) * v.topRows(i + 1).transpose();
          dv.topRows(i + 1).noalias() += p.row(i).head(i + 1).transpose() * da.row(i);
          const auto prow = p.row(i).head(i + 1);
          const double dot = (dp.array() * prow.array()).sum();
          Eigen::RowVectorXd ds = (prow.array() * (dp.array() - dot)).matrix() * scale;
          dq.row(i).noalias() = ds * k.topRows(i + 1);
          dk.topRows(i + 1).noalias() += ds.transpose() * q.row(i);
        }
      }
    }
    qkv.backward(x, n, dqkv_.data(), dx);
  }

 private:
  std::vector<double> qkv_out_, probs_, att_, datt_, dqkv_;
};

// Feed-forward block: Linear(H, 4H) -> GELU -> Linear(4H, H).
class Mlp {
 public:
  Linear fc;    // H -> 4H
  Linear out;   // 4H -> H
  int embed_dim = 0;

  void init(const std::string& name, int h, bool is_tsn, Rng& rng) {
    embed_dim = h;
    fc.init(name + ".fc", 4 * h, h, is_tsn, rng);
    out.init(name + ".out", h, 4 * h, is_tsn, rng);
  }

  void forward(const double* x, int64_t n, double* y) {
    const int64_t wide = static_cast<int64_t>(n) * 4 * embed_dim;
    fc_out_.assign(static_cast<size_t>(wide), 0.0);
    act_.assign(static_cast<size_t>(wide), 0.0);
    fc.forward(x, n, fc_out_.data());
    for (int64_t i = 0; i < wide; ++i) act_[static_cast<size_t>(i)] = gelu(fc_out_[static_cast<size_t>(i)]);
    out.forward(act_.data(), n, y);
  }

  void backward(const double* x, int64_t n, const double* dy, double* dx) {
    const int64_t wide = static_cast<int64_t>(n) * 4 * embed_dim;
    dact_.assign(static_cast<size_t>(wide), 0.0);
    out.backward(act_.data(), n, dy, dact_.data());
    for (int64_t i = 0; i < wide; ++i)
      dact_[static_cast<size_t>(i)] *= gelu_grad(fc_out_[static_cast<size_t>(i)]);
    fc.backward(x, n, dact_.data(), dx);
  }

 private:
  std::vector<double> fc_out_, act_, dact_;
};

// Pre-norm transformer block with residual dropout.
class TransformerBlock {
 public:
  LayerNorm ln1, ln2;
  CausalSelfAttention attn;
  Mlp mlp;
  int embed_dim = 0;

  void init(const std::string& name, int heads, int h, bool is_tsn, Rng& rng) {
    embed_dim = h;
    ln1.init(name + ".ln1", h);
    ln2.init(name + ".ln2", h);
    attn.init(name + ".attn", heads, h, is_tsn, rng);
    mlp.init(name + ".mlp", h, is_tsn, rng);
  }

  void forward(const double* x, int batch, int tokens, double rate, bool train, Rng* rng,
               double* y) {
    const int64_t n = static_cast<int64_t>(batch) * tokens;
    const int64_t size = n * embed_dim;
    ln1_out_.assign(static_cast<size_t>(size), 0.0);
    attn_out_.assign(static_cast<size_t>(size), 0.0);
    attn_drop_out_.assign(static_cast<size_t>(size), 0.0);
    mid_.assign(static_cast<size_t>(size), 0.0);
    ln2_out_.assign(static_cast<size_t>(size), 0.0);
    mlp_out_.assign(static_cast<size_t>(size), 0.0);
    mlp_drop_out_.assign(static_cast<size_t>(size), 0.0);

    ln1.forward(x, n, ln1_out_.data());
    attn.forward(ln1_out_.data(), batch, tokens, attn_out_.data());
    drop1_.forward(attn_out_.data(), size, rate, train, rng, attn_drop_out_.data());
    for (int64_t i = 0; i < size; ++i) mid_[static_cast<size_t>(i)] = x[i] + attn_drop_out_[static_cast<size_t>(i)];

    ln2.forward(mid_.data(), n, ln2_out_.data());
    mlp.forward(ln2_out_.data(), n, mlp_out_.data());
    drop2_.forward(mlp_out_.data(), size, rate, train, rng, mlp_drop_out_.data());
    for (int64_t i = 0; i < size; ++i) y[i] = mid_[static_cast<size_t>(i)] + mlp_drop_out_[static_cast<size_t>(i)];
  }

  void backward(const double* x, int batch, int tokens, const double* dy, double* dx) {
    const int64_t n = static_cast<int64_t>(batch) * tokens;
    const int64_t size = n * embed_dim;
    buf1_.assign(static_cast<size_t>(size), 0.0);
    buf2_.assign(static_cast<size_t>(size), 0.0);
    dmid_.assign(static_cast<size_t>(size), 0.0);

    // y = mid + drop2(mlp(ln2(mid)))
    drop2_.backward(dy, size, buf1_.data());
    mlp.backward(ln2_out_.data(), n, buf1_.data(), buf2_.data());
    ln2.backward(n, buf2_.data(), dmid_.data());
    for (int64_t i = 0; i < size; ++i) dmid_[static_cast<size_t>(i)] += dy[i];

    // mid = x + drop1(attn(ln1(x)))
    drop1_.backward(dmid_.data(), size, buf1_.data());
    attn.backward(ln1_out_.data(), batch, tokens, buf1_.data(), buf2_.data());
    ln1.backward(n, buf2_.data(), dx);
    for (int64_t i = 0; i < size; ++i) dx[i] += dmid_[static_cast<size_t>(i)];
  }

 private:
  std::vector<double> ln1_out_, attn_out_, attn_drop_out_, mid_, ln2_out_, mlp_out_,
      mlp_drop_out_;
  std::vector<double> buf1_, buf2_, dmid_;
  Dropout drop1_, drop2_;
};

}  // namespace tsn
