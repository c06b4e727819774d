#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "cellcast/rng.hpp"
#include "cellcast/tensor.hpp"

namespace cellcast::ad {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kAddRow,      // matrix + row vector broadcast over rows
  kSub,
  kMul,
  kMulByScalarNode,
  kAffine,      // a0 * x + a1 with double constants
  kMatMul,
  kTranspose,
  kSigmoid,
  kRelu,
  kSoftmaxRows,
  kLayerNormRows,
  kConcatCols,
  kMeanRows,
  kMeanAll,
  kSumAll,
  kConv3x3,
  kAvgPoolAll,
  kBroadcastRows,
  kDropout,
  kReshape,
};

// Reverse-mode tape over dense tensors. Templated on the scalar so the same
// graph code runs in plain double (gradients) and in Dual (exact
// forward-over-reverse Hessian-vector products). Evaluation is eager; nodes
// are created in topological order, so backward is a single reverse sweep.
template <class T>
class Graph {
 public:
  struct Node {
    Op op = Op::kLeaf;
    std::array<NodeId, 3> in{};
    std::uint8_t n_in = 0;
    bool requires_grad = false;
    TensorT<T> val;
    double a0 = 0.0;  // op constant (scale, eps, ...)
    double a1 = 0.0;
    std::size_t i0 = 0;  // op extent (broadcast rows, concat split, ...)
    TensorT<T> aux;                 // cached intermediate (layer norm x-hat)
    std::vector<T> aux_row;         // cached per-row factor (layer norm 1/std)
    std::vector<double> mask;       // dropout keep/scale mask
  };

  NodeId constant(const Tensor& v) { return push_leaf(widen<T>(v), false); }
  NodeId constant(TensorT<T> v) { return push_leaf(std::move(v), false); }
  NodeId param(TensorT<T> v) { return push_leaf(std::move(v), true); }

  NodeId add(NodeId a, NodeId b) {
    require_same(a, b, "add");
    TensorT<T> out = val(a);
    const auto& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(Op::kAdd, {a, b}, 2, std::move(out));
  }

  NodeId add_row(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.rank() != 2 || vb.size() != va.shape()[1]) {
      throw ConfigError("add_row expects [RxC] + [C], got " + shape_str(va.shape()) + " + " +
                        shape_str(vb.shape()));
    }
    TensorT<T> out = va;
    const std::size_t rows = va.shape()[0], cols = va.shape()[1];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += vb[c];
    return push(Op::kAddRow, {a, b}, 2, std::move(out));
  }

  NodeId sub(NodeId a, NodeId b) {
    require_same(a, b, "sub");
    TensorT<T> out = val(a);
    const auto& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(Op::kSub, {a, b}, 2, std::move(out));
  }

  NodeId mul(NodeId a, NodeId b) {
    require_same(a, b, "mul");
    TensorT<T> out = val(a);
    const auto& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(Op::kMul, {a, b}, 2, std::move(out));
  }

  // Elementwise product with a size-1 scalar node.
  NodeId mul_by_scalar_node(NodeId a, NodeId s) {
    if (val(s).size() != 1) throw ConfigError("mul_by_scalar_node expects a size-1 node");
    TensorT<T> out = val(a);
    const T sv = val(s)[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    return push(Op::kMulByScalarNode, {a, s}, 2, std::move(out));
  }

  // a0 * x + a1 elementwise, constants.
  NodeId affine(NodeId a, double scale, double shift) {
    TensorT<T> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = out[i] * from_real<T>(scale) + from_real<T>(shift);
    NodeId id = push(Op::kAffine, {a}, 1, std::move(out));
    nodes_[id].a0 = scale;
    nodes_[id].a1 = shift;
    return id;
  }

  NodeId scale(NodeId a, double s) { return affine(a, s, 0.0); }

  NodeId matmul(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0]) {
      throw ConfigError("matmul shape mismatch: " + shape_str(va.shape()) + " x " +
                        shape_str(vb.shape()));
    }
    const std::size_t m = va.shape()[0], k = va.shape()[1], n = vb.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = va[i * k + p];
        const T* brow = vb.data() + p * n;
        T* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
    return push(Op::kMatMul, {a, b}, 2, std::move(out));
  }

  NodeId transpose(NodeId a) {
    const auto& va = val(a);
    if (va.rank() != 2) throw ConfigError("transpose expects a rank-2 tensor");
    const std::size_t r = va.shape()[0], c = va.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j * r + i] = va[i * c + j];
    return push(Op::kTranspose, {a}, 1, std::move(out));
  }

  NodeId sigmoid(NodeId a) {
    TensorT<T> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T x = out[i];
      if (real_part(x) >= 0.0) {
        out[i] = from_real<T>(1.0) / (from_real<T>(1.0) + exp_t(-x));
      } else {
        const T e = exp_t(x);
        out[i] = e / (from_real<T>(1.0) + e);
      }
    }
    return push(Op::kSigmoid, {a}, 1, std::move(out));
  }

  NodeId relu(NodeId a) {
    TensorT<T> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i)
      if (real_part(out[i]) <= 0.0) out[i] = from_real<T>(0.0);
    return push(Op::kRelu, {a}, 1, std::move(out));
  }

  NodeId softmax_rows(NodeId a) {
    const auto& va = val(a);
    if (va.rank() != 2) throw ConfigError("softmax_rows expects a rank-2 tensor");
    const std::size_t rows = va.shape()[0], cols = va.shape()[1];
    TensorT<T> out = va;
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * cols;
      double m = real_part(row[0]);
      for (std::size_t c = 1; c < cols; ++c) m = std::max(m, real_part(row[c]));
      T denom = from_real<T>(0.0);
      for (std::size_t c = 0; c < cols; ++c) {
        row[c] = exp_t(row[c] - from_real<T>(m));
        denom += row[c];
      }
      for (std::size_t c = 0; c < cols; ++c) row[c] /= denom;
    }
    return push(Op::kSoftmaxRows, {a}, 1, std::move(out));
  }

  // Per-row normalization followed by a learned affine map.
  NodeId layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const auto& vx = val(x);
    if (vx.rank() != 2) throw ConfigError("layer_norm_rows expects a rank-2 tensor");
    const std::size_t rows = vx.shape()[0], cols = vx.shape()[1];
    if (val(gamma).size() != cols || val(beta).size() != cols) {
      throw ConfigError("layer_norm_rows affine parameters must have length " +
                        std::to_string(cols));
    }
    TensorT<T> xhat = TensorT<T>::zeros({rows, cols});
    std::vector<T> inv(rows);
    TensorT<T> out = TensorT<T>::zeros({rows, cols});
    const auto& g = val(gamma);
    const auto& b = val(beta);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = vx.data() + r * cols;
      T mean = from_real<T>(0.0);
      for (std::size_t c = 0; c < cols; ++c) mean += row[c];
      mean /= from_real<T>(static_cast<double>(cols));
      T var = from_real<T>(0.0);
      for (std::size_t c = 0; c < cols; ++c) {
        const T d = row[c] - mean;
        var += d * d;
      }
      var /= from_real<T>(static_cast<double>(cols));
      const T istd = from_real<T>(1.0) / sqrt_t(var + from_real<T>(eps));
      inv[r] = istd;
      for (std::size_t c = 0; c < cols; ++c) {
        const T h = (row[c] - mean) * istd;
        xhat[r * cols + c] = h;
        out[r * cols + c] = g[c] * h + b[c];
      }
    }
    NodeId id = push(Op::kLayerNormRows, {x, gamma, beta}, 3, std::move(out));
    nodes_[id].a0 = eps;
    nodes_[id].aux = std::move(xhat);
    nodes_[id].aux_row = std::move(inv);
    return id;
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.shape()[0] != vb.shape()[0]) {
      throw ConfigError("concat_cols expects matching row counts");
    }
    const std::size_t rows = va.shape()[0], ca = va.shape()[1], cb = vb.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({rows, ca + cb});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ca; ++c) out[r * (ca + cb) + c] = va[r * ca + c];
      for (std::size_t c = 0; c < cb; ++c) out[r * (ca + cb) + ca + c] = vb[r * cb + c];
    }
    NodeId id = push(Op::kConcatCols, {a, b}, 2, std::move(out));
    nodes_[id].i0 = ca;
    return id;
  }

  NodeId mean_rows(NodeId a) {
    const auto& va = val(a);
    if (va.rank() != 2) throw ConfigError("mean_rows expects a rank-2 tensor");
    const std::size_t rows = va.shape()[0], cols = va.shape()[1];
    TensorT<T> out = TensorT<T>::zeros({cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[c] += va[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) out[c] /= from_real<T>(static_cast<double>(rows));
    return push(Op::kMeanRows, {a}, 1, std::move(out));
  }

  NodeId mean_all(NodeId a) {
    const auto& va = val(a);
    T acc = from_real<T>(0.0);
    for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
    acc /= from_real<T>(static_cast<double>(va.size()));
    TensorT<T> out = TensorT<T>::zeros({});
    out[0] = acc;
    return push(Op::kMeanAll, {a}, 1, std::move(out));
  }

  NodeId sum_all(NodeId a) {
    const auto& va = val(a);
    T acc = from_real<T>(0.0);
    for (std::size_t i = 0; i < va.size(); ++i) acc += va[i];
    TensorT<T> out = TensorT<T>::zeros({});
    out[0] = acc;
    return push(Op::kSumAll, {a}, 1, std::move(out));
  }

  // 3x3 stride-1 zero-padded convolution: [HxWxCin] * [3x3xCinxCout] + [Cout].
  NodeId conv3x3(NodeId x, NodeId kernel, NodeId bias) {
    const auto& vx = val(x);
    const auto& vk = val(kernel);
    const auto& vb = val(bias);
    if (vx.rank() != 3 || vk.rank() != 4 || vk.shape()[0] != 3 || vk.shape()[1] != 3 ||
        vk.shape()[2] != vx.shape()[2] || vb.size() != vk.shape()[3]) {
      throw ConfigError("conv3x3 shape mismatch: x=" + shape_str(vx.shape()) +
                        " k=" + shape_str(vk.shape()));
    }
    const std::size_t h = vx.shape()[0], w = vx.shape()[1];
    const std::size_t cin = vx.shape()[2], cout = vk.shape()[3];
    TensorT<T> out = TensorT<T>::zeros({h, w, cout});
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        T* orow = out.data() + (i * w + j) * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] = vb[co];
        for (int dh = -1; dh <= 1; ++dh) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + dh;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          for (int dw = -1; dw <= 1; ++dw) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + dw;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
            const T* xrow = vx.data() + (static_cast<std::size_t>(si) * w +
                                         static_cast<std::size_t>(sj)) * cin;
            const T* krow = vk.data() + ((static_cast<std::size_t>(dh + 1) * 3 +
                                          static_cast<std::size_t>(dw + 1)) * cin) * cout;
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t co = 0; co < cout; ++co)
                orow[co] += xrow[ci] * krow[ci * cout + co];
          }
        }
      }
    }
    return push(Op::kConv3x3, {x, kernel, bias}, 3, std::move(out));
  }

  NodeId avg_pool_all(NodeId a) {
    const auto& va = val(a);
    if (va.rank() != 3) throw ConfigError("avg_pool_all expects a rank-3 tensor");
    const std::size_t hw = va.shape()[0] * va.shape()[1], ch = va.shape()[2];
    TensorT<T> out = TensorT<T>::zeros({ch});
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < ch; ++c) out[c] += va[p * ch + c];
    for (std::size_t c = 0; c < ch; ++c) out[c] /= from_real<T>(static_cast<double>(hw));
    return push(Op::kAvgPoolAll, {a}, 1, std::move(out));
  }

  NodeId broadcast_rows(NodeId v, std::size_t rows) {
    const auto& vv = val(v);
    if (vv.rank() != 1) throw ConfigError("broadcast_rows expects a rank-1 tensor");
    const std::size_t cols = vv.size();
    TensorT<T> out = TensorT<T>::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = vv[c];
    NodeId id = push(Op::kBroadcastRows, {v}, 1, std::move(out));
    nodes_[id].i0 = rows;
    return id;
  }

  // Inverted dropout; identity when rate == 0. The mask is drawn eagerly so
  // evaluation stays pure given the caller's RNG stream.
  NodeId dropout(NodeId a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    TensorT<T> out = val(a);
    std::vector<double> mask(out.size());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < out.size(); ++i) {
      mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
      out[i] *= from_real<T>(mask[i]);
    }
    NodeId id = push(Op::kDropout, {a}, 1, std::move(out));
    nodes_[id].mask = std::move(mask);
    return id;
  }

  NodeId reshape(NodeId a, Shape shape) {
    TensorT<T> out = val(a).reshaped(std::move(shape));
    return push(Op::kReshape, {a}, 1, std::move(out));
  }

  const TensorT<T>& val(NodeId id) const { return nodes_[id].val; }

  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Gradients of all grad-requiring nodes
  // are available through grad() afterwards.
  void backward(NodeId root) {
    if (val(root).size() != 1) throw ConfigError("backward requires a scalar root");
    grads_.assign(nodes_.size(), TensorT<T>());
    grads_[root] = TensorT<T>::full(val(root).shape(), 1.0);
    for (NodeId id = root + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || grads_[id].empty()) continue;
      pull(id);
    }
  }

  TensorT<T> grad(NodeId id) const {
    if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
    return TensorT<T>::zeros(val(id).shape());
  }

 private:
  static T exp_t(const T& x) {
    using std::exp;
    return exp(x);
  }
  static T sqrt_t(const T& x) {
    using std::sqrt;
    return sqrt(x);
  }

  NodeId push_leaf(TensorT<T> v, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = requires_grad;
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId push(Op op, std::array<NodeId, 3> in, std::uint8_t n_in, TensorT<T> v) {
    Node n;
    n.op = op;
    n.in = in;
    n.n_in = n_in;
    n.val = std::move(v);
    for (std::uint8_t i = 0; i < n_in; ++i) n.requires_grad |= nodes_[in[i]].requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void require_same(NodeId a, NodeId b, const char* op) const {
    if (!val(a).same_shape(val(b))) {
      throw ConfigError(std::string(op) + " shape mismatch: " + shape_str(val(a).shape()) +
                        " vs " + shape_str(val(b).shape()));
    }
  }

  TensorT<T>& slot(NodeId id) {
    if (grads_[id].empty()) grads_[id] = TensorT<T>::zeros(val(id).shape());
    return grads_[id];
  }

  bool wants(NodeId id) const { return nodes_[id].requires_grad; }

  void pull(NodeId id) {
    const Node& n = nodes_[id];
    const TensorT<T>& g = grads_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          if (!wants(n.in[s])) continue;
          auto& d = slot(n.in[s]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kAddRow: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);
          const std::size_t rows = g.shape()[0], cols = g.shape()[1];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
        }
        break;
      }
      case Op::kSub: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        const auto& va = val(n.in[0]);
        const auto& vb = val(n.in[1]);
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * vb[i];
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * va[i];
        }
        break;
      }
      case Op::kMulByScalarNode: {
        const auto& va = val(n.in[0]);
        const T sv = val(n.in[1])[0];
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * sv;
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);
          T acc = from_real<T>(0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
          d[0] += acc;
        }
        break;
      }
      case Op::kAffine: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * from_real<T>(n.a0);
        }
        break;
      }
      case Op::kMatMul: {
        const auto& va = val(n.in[0]);
        const auto& vb = val(n.in[1]);
        const std::size_t m = va.shape()[0], k = va.shape()[1], nn = vb.shape()[1];
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);  // dA += g * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < nn; ++j) {
              const T gij = g[i * nn + j];
              const T* brow = vb.data() + j;
              T* drow = d.data() + i * k;
              for (std::size_t p = 0; p < k; ++p) drow[p] += gij * brow[p * nn];
            }
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);  // dB += A^T * g
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = va[i * k + p];
              const T* grow = g.data() + i * nn;
              T* drow = d.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) drow[j] += aip * grow[j];
            }
        }
        break;
      }
      case Op::kTranspose: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const std::size_t r = g.shape()[0], c = g.shape()[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[j * r + i] += g[i * c + j];
        }
        break;
      }
      case Op::kSigmoid: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const auto& y = n.val;
          for (std::size_t i = 0; i < g.size(); ++i)
            d[i] += g[i] * y[i] * (from_real<T>(1.0) - y[i]);
        }
        break;
      }
      case Op::kRelu: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const auto& x = val(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (real_part(x[i]) > 0.0) d[i] += g[i];
        }
        break;
      }
      case Op::kSoftmaxRows: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const auto& y = n.val;
          const std::size_t rows = y.shape()[0], cols = y.shape()[1];
          for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * cols;
            const T* gr = g.data() + r * cols;
            T dot = from_real<T>(0.0);
            for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
            T* dr = d.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
          }
        }
        break;
      }
      case Op::kLayerNormRows: {
        const auto& xhat = n.aux;
        const auto& inv = n.aux_row;
        const auto& gamma = val(n.in[1]);
        const std::size_t rows = g.shape()[0], cols = g.shape()[1];
        if (wants(n.in[2])) {
          auto& db = slot(n.in[2]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
        }
        if (wants(n.in[1])) {
          auto& dg = slot(n.in[1]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              dg[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (wants(n.in[0])) {
          auto& dx = slot(n.in[0]);
          const T cn = from_real<T>(static_cast<double>(cols));
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = from_real<T>(0.0);
            T mean_dh_xhat = from_real<T>(0.0);
            for (std::size_t c = 0; c < cols; ++c) {
              const T dh = g[r * cols + c] * gamma[c];
              mean_dh += dh;
              mean_dh_xhat += dh * xhat[r * cols + c];
            }
            mean_dh /= cn;
            mean_dh_xhat /= cn;
            for (std::size_t c = 0; c < cols; ++c) {
              const T dh = g[r * cols + c] * gamma[c];
              dx[r * cols + c] +=
                  inv[r] * (dh - mean_dh - xhat[r * cols + c] * mean_dh_xhat);
            }
          }
        }
        break;
      }
      case Op::kConcatCols: {
        const std::size_t rows = g.shape()[0], total = g.shape()[1], ca = n.i0;
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += g[r * total + c];
        }
        if (wants(n.in[1])) {
          auto& d = slot(n.in[1]);
          const std::size_t cb = total - ca;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += g[r * total + ca + c];
        }
        break;
      }
      case Op::kMeanRows: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const std::size_t rows = val(n.in[0]).shape()[0], cols = g.size();
          const T w = from_real<T>(1.0 / static_cast<double>(rows));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[c] * w;
        }
        break;
      }
      case Op::kMeanAll: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const T w = g[0] / from_real<T>(static_cast<double>(d.size()));
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += w;
        }
        break;
      }
      case Op::kSumAll: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
        }
        break;
      }
      case Op::kConv3x3: {
        const auto& vx = val(n.in[0]);
        const auto& vk = val(n.in[1]);
        const std::size_t h = vx.shape()[0], w = vx.shape()[1];
        const std::size_t cin = vx.shape()[2], cout = vk.shape()[3];
        const bool wx = wants(n.in[0]), wk = wants(n.in[1]), wb = wants(n.in[2]);
        TensorT<T>* dx = wx ? &slot(n.in[0]) : nullptr;
        TensorT<T>* dk = wk ? &slot(n.in[1]) : nullptr;
        TensorT<T>* db = wb ? &slot(n.in[2]) : nullptr;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const T* grow = g.data() + (i * w + j) * cout;
            if (db)
              for (std::size_t co = 0; co < cout; ++co) (*db)[co] += grow[co];
            for (int dh = -1; dh <= 1; ++dh) {
              const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + dh;
              if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
              for (int dw = -1; dw <= 1; ++dw) {
                const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + dw;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(si) * w +
                                          static_cast<std::size_t>(sj)) * cin;
                const std::size_t koff = ((static_cast<std::size_t>(dh + 1) * 3 +
                                           static_cast<std::size_t>(dw + 1)) * cin) * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  for (std::size_t co = 0; co < cout; ++co) {
                    if (dx) (*dx)[xoff + ci] += grow[co] * vk[koff + ci * cout + co];
                    if (dk) (*dk)[koff + ci * cout + co] += grow[co] * vx[xoff + ci];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kAvgPoolAll: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const auto& vx = val(n.in[0]);
          const std::size_t hw = vx.shape()[0] * vx.shape()[1], ch = vx.shape()[2];
          const T w = from_real<T>(1.0 / static_cast<double>(hw));
          for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t c = 0; c < ch; ++c) d[p * ch + c] += g[c] * w;
        }
        break;
      }
      case Op::kBroadcastRows: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          const std::size_t rows = n.i0, cols = d.size();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
        }
        break;
      }
      case Op::kDropout: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            d[i] += g[i] * from_real<T>(n.mask[i]);
        }
        break;
      }
      case Op::kReshape: {
        if (wants(n.in[0])) {
          auto& d = slot(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<TensorT<T>> grads_;
};

}  // namespace cellcast::ad
