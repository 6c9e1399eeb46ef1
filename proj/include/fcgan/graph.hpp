// Reverse-mode automatic differentiation over a recording tape of dense
// tensors. Values are computed eagerly as nodes are appended; backward()
// walks the tape in reverse. input_gradient() additionally *constructs* the
// adjoint computation as new tape nodes, so a second backward pass can
// differentiate through a gradient (needed to penalize the norm of a
// critic's input gradient w.r.t. the critic's own weights).
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fcgan/errors.hpp"
#include "fcgan/optim.hpp"
#include "fcgan/rng.hpp"
#include "fcgan/tensor.hpp"

namespace fcgan {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class Op : std::uint8_t {
  Leaf,
  Affine,          // y = x*W + b
  MatmulBT,        // y = A * W^T
  BatchNormTrain,  // batch statistics, updates running stats
  BatchNormInfer,  // running statistics
  LeakyRelu,
  Slr,  // signed two-slope activation, learnable slopes p (on-side) / q (off)
  Softmax,  // along last axis
  Dropout,
  ConcatCols,
  SliceCols,
  Add,
  Sub,
  Mul,  // elementwise
  Scale,
  AddScalar,
  MulConst,  // elementwise by a fixed tensor payload
  Square,
  Sqrt,
  SumCols,        // [n x w] -> [n]
  BroadcastCols,  // [n] -> [n x w]
  MeanAll,        // -> [1]
  DotConst,       // sum(x .* weights) -> [1]
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::MatmulBT: return "matmul_bt";
    case Op::BatchNormTrain: return "batch_norm(train)";
    case Op::BatchNormInfer: return "batch_norm(infer)";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Slr: return "slr";
    case Op::Softmax: return "softmax";
    case Op::Dropout: return "dropout";
    case Op::ConcatCols: return "concat";
    case Op::SliceCols: return "slice";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MulConst: return "mul_const";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::MeanAll: return "mean_all";
    case Op::DotConst: return "dot_const";
  }
  return "?";
}

// Running statistics for batch normalization; owned by the layer, not the
// graph, and updated in place by train-mode forwards.
struct BatchNormState {
  Tensor mean;
  Tensor var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t width)
      : mean(Tensor::vector(width, 0.0)), var(Tensor::vector(width, 1.0)) {}
};

struct Node {
  Op op = Op::Leaf;
  Tensor value;
  std::vector<NodeId> inputs;
  bool needs_grad = false;
  double a = 0.0;   // slope / rate / scale / shift, per op
  int itag = 0;     // SLR sign
  std::size_t lo = 0, hi = 0;  // slice bounds
  Tensor aux;       // masks, saved normalized input, dot weights
  Tensor aux2;      // saved inverse stddev per column
};

namespace detail {
using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;
}  // namespace detail

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }

  // ---- leaves ------------------------------------------------------------

  NodeId input(Tensor v, bool needs_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  NodeId constant(Tensor v) { return input(std::move(v), false); }

  // Stages a parameter's current value as a differentiable leaf and records
  // the association so gradients can be collected per parameter.
  NodeId param(Parameter& p) {
    const NodeId id = input(p.value, true);
    registry_.emplace_back(id, &p);
    return id;
  }

  const std::vector<std::pair<NodeId, Parameter*>>& param_registry() const {
    return registry_;
  }

  // ---- math ops ----------------------------------------------------------

  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    if (xv.ndim() != 2 || wv.ndim() != 2)
      throw DimensionError("affine: expected matrices, got " + xv.shape_str() +
                           " and " + wv.shape_str());
    if (xv.cols() != wv.rows() || bv.size() != wv.cols())
      throw DimensionError("affine: shape mismatch x" + xv.shape_str() + " W" +
                           wv.shape_str() + " b" + bv.shape_str());
    const std::size_t n = xv.rows(), in = xv.cols(), out = wv.cols();
    Node nd;
    nd.op = Op::Affine;
    nd.inputs = {x, w, b};
    nd.value = Tensor::matrix(n, out);
    detail::CMatMap xm(xv.data(), n, in), wm(wv.data(), in, out);
    detail::MatMap ym(nd.value.data(), n, out);
    ym.noalias() = xm * wm;
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), out);
    return push_op(std::move(nd));
  }

  // y = A * W^T; the adjoint of affine() w.r.t. its input.
  NodeId matmul_bt(NodeId a, NodeId w) {
    const Tensor& av = val(a);
    const Tensor& wv = val(w);
    if (av.ndim() != 2 || wv.ndim() != 2 || av.cols() != wv.cols())
      throw DimensionError("matmul_bt: shape mismatch " + av.shape_str() +
                           " vs " + wv.shape_str());
    const std::size_t n = av.rows(), out = av.cols(), in = wv.rows();
    Node nd;
    nd.op = Op::MatmulBT;
    nd.inputs = {a, w};
    nd.value = Tensor::matrix(n, in);
    detail::CMatMap am(av.data(), n, out), wm(wv.data(), in, out);
    detail::MatMap ym(nd.value.data(), n, in);
    ym.noalias() = am * wm.transpose();
    return push_op(std::move(nd));
  }

  NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta,
                          BatchNormState& state, double eps = 1e-5,
                          double momentum = 0.99) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 2)
      throw DimensionError("batch_norm: expected matrix, got " +
                           xv.shape_str());
    const std::size_t n = xv.rows(), w = xv.cols();
    if (n < 2)
      throw DegenerateBatchError(
          "batch_norm: batch statistics need at least 2 rows, got " +
          std::to_string(n));
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    if (gv.size() != w || bv.size() != w || state.mean.size() != w)
      throw DimensionError("batch_norm: width mismatch for " + xv.shape_str());
    Node nd;
    nd.op = Op::BatchNormTrain;
    nd.inputs = {x, gamma, beta};
    nd.value = Tensor::matrix(n, w);
    nd.aux = Tensor::matrix(n, w);   // normalized input
    nd.aux2 = Tensor::vector(w);     // 1 / sqrt(var + eps)
    nd.a = eps;
    for (std::size_t c = 0; c < w; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += xv.at(r, c);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double d = xv.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      nd.aux2[c] = inv;
      for (std::size_t r = 0; r < n; ++r) {
        const double xh = (xv.at(r, c) - mean) * inv;
        nd.aux.at(r, c) = xh;
        nd.value.at(r, c) = gv[c] * xh + bv[c];
      }
      state.mean[c] = momentum * state.mean[c] + (1.0 - momentum) * mean;
      state.var[c] = momentum * state.var[c] + (1.0 - momentum) * var;
    }
    return push_op(std::move(nd));
  }

  NodeId batch_norm_infer(NodeId x, NodeId gamma, NodeId beta,
                          const BatchNormState& state, double eps = 1e-5) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 2)
      throw DimensionError("batch_norm: expected matrix, got " +
                           xv.shape_str());
    const std::size_t n = xv.rows(), w = xv.cols();
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    if (gv.size() != w || bv.size() != w || state.mean.size() != w)
      throw DimensionError("batch_norm: width mismatch for " + xv.shape_str());
    Node nd;
    nd.op = Op::BatchNormInfer;
    nd.inputs = {x, gamma, beta};
    nd.value = Tensor::matrix(n, w);
    nd.aux = Tensor::matrix(n, w);
    nd.aux2 = Tensor::vector(w);
    nd.a = eps;
    for (std::size_t c = 0; c < w; ++c) {
      const double inv = 1.0 / std::sqrt(state.var[c] + eps);
      nd.aux2[c] = inv;
      for (std::size_t r = 0; r < n; ++r) {
        const double xh = (xv.at(r, c) - state.mean[c]) * inv;
        nd.aux.at(r, c) = xh;
        nd.value.at(r, c) = gv[c] * xh + bv[c];
      }
    }
    return push_op(std::move(nd));
  }

  NodeId leaky_relu(NodeId x, double alpha) {
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::LeakyRelu;
    nd.inputs = {x};
    nd.a = alpha;
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
      nd.value[i] = xv[i] >= 0.0 ? xv[i] : alpha * xv[i];
    return push_op(std::move(nd));
  }

  // f(x) = p*x where sign*x >= 0, q*x elsewhere; p and q are scalar leaves.
  NodeId slr(NodeId x, NodeId p, NodeId q, int sign) {
    const Tensor& xv = val(x);
    const double pv = val(p).scalar_value();
    const double qv = val(q).scalar_value();
    Node nd;
    nd.op = Op::Slr;
    nd.inputs = {x, p, q};
    nd.itag = sign;
    nd.value = Tensor(xv.shape());
    const double s = static_cast<double>(sign);
    for (std::size_t i = 0; i < xv.size(); ++i)
      nd.value[i] = (s * xv[i] >= 0.0 ? pv : qv) * xv[i];
    return push_op(std::move(nd));
  }

  NodeId softmax(NodeId x) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 2)
      throw DimensionError("softmax: expected matrix, got " + xv.shape_str());
    const std::size_t n = xv.rows(), w = xv.cols();
    Node nd;
    nd.op = Op::Softmax;
    nd.inputs = {x};
    nd.value = Tensor::matrix(n, w);
    for (std::size_t r = 0; r < n; ++r) {
      double mx = xv.at(r, 0);
      for (std::size_t c = 1; c < w; ++c) mx = std::max(mx, xv.at(r, c));
      double sum = 0.0;
      for (std::size_t c = 0; c < w; ++c) {
        const double e = std::exp(xv.at(r, c) - mx);
        nd.value.at(r, c) = e;
        sum += e;
      }
      for (std::size_t c = 0; c < w; ++c) nd.value.at(r, c) /= sum;
    }
    return push_op(std::move(nd));
  }

  // Train-mode dropout; the mask is drawn here and saved, so a gradient
  // penalty built on top of this evaluation penalizes the same function that
  // produced the scores. Inference-mode dropout is the identity: skip the op.
  NodeId dropout(NodeId x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw ConfigError("dropout: rate must lie in [0, 1), got " +
                        std::to_string(rate));
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::Dropout;
    nd.inputs = {x};
    nd.a = rate;
    nd.aux = Tensor(xv.shape());
    nd.value = Tensor(xv.shape());
    const double keep = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      nd.aux[i] = rng.uniform01() < rate ? 0.0 : keep;
      nd.value[i] = xv[i] * nd.aux[i];
    }
    return push_op(std::move(nd));
  }

  NodeId concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    const std::size_t n = val(xs[0]).rows();
    std::size_t total = 0;
    for (NodeId id : xs) {
      const Tensor& v = val(id);
      if (v.ndim() != 2 || v.rows() != n)
        throw DimensionError("concat: leading dimension mismatch, " +
                             val(xs[0]).shape_str() + " vs " + v.shape_str());
      total += v.cols();
    }
    Node nd;
    nd.op = Op::ConcatCols;
    nd.inputs = xs;
    nd.value = Tensor::matrix(n, total);
    std::size_t off = 0;
    for (NodeId id : xs) {
      const Tensor& v = val(id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < v.cols(); ++c)
          nd.value.at(r, off + c) = v.at(r, c);
      off += v.cols();
    }
    return push_op(std::move(nd));
  }

  NodeId slice_cols(NodeId x, std::size_t lo, std::size_t hi) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 2 || lo >= hi || hi > xv.cols())
      throw DimensionError("slice: bounds [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + ") invalid for " +
                           xv.shape_str());
    Node nd;
    nd.op = Op::SliceCols;
    nd.inputs = {x};
    nd.lo = lo;
    nd.hi = hi;
    nd.value = Tensor::matrix(xv.rows(), hi - lo);
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = lo; c < hi; ++c)
        nd.value.at(r, c - lo) = xv.at(r, c);
    return push_op(std::move(nd));
  }

  NodeId add(NodeId x, NodeId y) { return binary(Op::Add, x, y); }
  NodeId sub(NodeId x, NodeId y) { return binary(Op::Sub, x, y); }
  NodeId mul(NodeId x, NodeId y) { return binary(Op::Mul, x, y); }

  NodeId scale(NodeId x, double c) {
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::Scale;
    nd.inputs = {x};
    nd.a = c;
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) nd.value[i] = c * xv[i];
    return push_op(std::move(nd));
  }

  NodeId add_scalar(NodeId x, double c) {
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::AddScalar;
    nd.inputs = {x};
    nd.a = c;
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) nd.value[i] = xv[i] + c;
    return push_op(std::move(nd));
  }

  NodeId mul_const(NodeId x, Tensor mask) {
    const Tensor& xv = val(x);
    require_same_shape(xv, mask, "mul_const");
    Node nd;
    nd.op = Op::MulConst;
    nd.inputs = {x};
    nd.aux = std::move(mask);
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
      nd.value[i] = xv[i] * nd.aux[i];
    return push_op(std::move(nd));
  }

  NodeId square(NodeId x) {
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::Square;
    nd.inputs = {x};
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) nd.value[i] = xv[i] * xv[i];
    return push_op(std::move(nd));
  }

  NodeId sqrt_elem(NodeId x) {
    const Tensor& xv = val(x);
    Node nd;
    nd.op = Op::Sqrt;
    nd.inputs = {x};
    nd.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
      nd.value[i] = std::sqrt(xv[i]);
    return push_op(std::move(nd));
  }

  NodeId sum_cols(NodeId x) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 2)
      throw DimensionError("sum_cols: expected matrix, got " + xv.shape_str());
    Node nd;
    nd.op = Op::SumCols;
    nd.inputs = {x};
    nd.value = Tensor::vector(xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < xv.cols(); ++c) s += xv.at(r, c);
      nd.value[r] = s;
    }
    return push_op(std::move(nd));
  }

  NodeId broadcast_cols(NodeId x, std::size_t width) {
    const Tensor& xv = val(x);
    if (xv.ndim() != 1)
      throw DimensionError("broadcast_cols: expected vector, got " +
                           xv.shape_str());
    Node nd;
    nd.op = Op::BroadcastCols;
    nd.inputs = {x};
    nd.value = Tensor::matrix(xv.size(), width);
    for (std::size_t r = 0; r < xv.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) nd.value.at(r, c) = xv[r];
    return push_op(std::move(nd));
  }

  NodeId mean_all(NodeId x) {
    const Tensor& xv = val(x);
    if (xv.empty()) throw DimensionError("mean_all: empty tensor");
    Node nd;
    nd.op = Op::MeanAll;
    nd.inputs = {x};
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    nd.value = Tensor::scalar(s / static_cast<double>(xv.size()));
    return push_op(std::move(nd));
  }

  NodeId dot_const(NodeId x, Tensor weights) {
    const Tensor& xv = val(x);
    require_same_shape(xv, weights, "dot_const");
    Node nd;
    nd.op = Op::DotConst;
    nd.inputs = {x};
    nd.aux = std::move(weights);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * nd.aux[i];
    nd.value = Tensor::scalar(s);
    return push_op(std::move(nd));
  }

  // ---- reverse pass ------------------------------------------------------

  // Exact reverse-mode gradients of a scalar output w.r.t. every node that
  // carries needs_grad. Returns one adjoint slot per node; slots that were
  // never needed stay empty.
  std::vector<Tensor> backward(NodeId out) const {
    const Node& on = node(out);
    if (!on.value.is_scalar())
      throw DimensionError("backward: output must be scalar, got " +
                           on.value.shape_str());
    std::vector<Tensor> adj(nodes_.size());
    adj[out] = Tensor(on.value.shape(), 1.0);
    for (NodeId id = out + 1; id-- > 0;) {
      const Node& nd = nodes_[id];
      if (adj[id].empty() || nd.op == Op::Leaf) continue;
      if (!nd.needs_grad) continue;
      accumulate_into_inputs(nd, adj[id], adj);
    }
    return adj;
  }

  // Gradient tensors aligned with the parameter registry (null when a
  // parameter did not participate in the differentiated output).
  std::vector<const Tensor*> param_grads(
      const std::vector<Tensor>& adj) const {
    std::vector<const Tensor*> out;
    out.reserve(registry_.size());
    for (const auto& [id, p] : registry_)
      out.push_back(adj[id].empty() ? nullptr : &adj[id]);
    return out;
  }

  std::vector<Parameter*> registered_params() const {
    std::vector<Parameter*> out;
    out.reserve(registry_.size());
    for (const auto& [id, p] : registry_) out.push_back(p);
    return out;
  }

  // ---- second-order support ----------------------------------------------

  // Builds, as new tape nodes, the gradient of `out` w.r.t. `in` (with the
  // usual all-ones seed when `out` has one scalar per row). The returned node
  // is differentiable: a later backward() through it reaches any parameter
  // that the path's weights came from. Only ops whose adjoint is exactly
  // expressible with tape ops are allowed on the path.
  NodeId input_gradient(NodeId out, NodeId in) {
    if (out >= nodes_.size() || in >= nodes_.size())
      throw Error("input_gradient: node id out of range");
    const NodeId top = out;
    // Ancestors of out.
    std::vector<char> anc(top + 1, 0);
    anc[top] = 1;
    for (NodeId id = top + 1; id-- > 0;) {
      if (!anc[id]) continue;
      for (NodeId i : nodes_[id].inputs)
        if (i <= top) anc[i] = 1;
    }
    // Descendants of in.
    std::vector<char> desc(top + 1, 0);
    if (in <= top) desc[in] = 1;
    for (NodeId id = in; id <= top; ++id) {
      if (desc[id]) continue;
      for (NodeId i : nodes_[id].inputs)
        if (i <= top && desc[i]) {
          desc[id] = 1;
          break;
        }
    }
    if (!desc[top])
      throw Error("input_gradient: output is detached from the given input");
    std::vector<char> on_path(top + 1, 0);
    for (NodeId id = 0; id <= top; ++id) on_path[id] = anc[id] && desc[id];
    for (NodeId id = 0; id <= top; ++id) {
      if (!on_path[id] || id == in) continue;
      switch (nodes_[id].op) {
        case Op::Affine:
        case Op::LeakyRelu:
        case Op::Dropout:
        case Op::ConcatCols:
        case Op::Square:
        case Op::Scale:
        case Op::AddScalar:
        case Op::Add:
        case Op::Sub:
        case Op::SumCols:
        case Op::MulConst:
          break;
        default:
          throw UnsupportedSecondOrderError(
              std::string("input_gradient: op '") + op_name(nodes_[id].op) +
              "' has no exact second-order path");
      }
    }

    std::vector<NodeId> adjn(top + 1, kNoNode);
    adjn[top] = constant(Tensor(node(top).value.shape(), 1.0));
    auto deposit = [&](NodeId dst, NodeId contrib) {
      if (dst > top || !on_path[dst]) return;
      adjn[dst] = adjn[dst] == kNoNode ? contrib : add(adjn[dst], contrib);
    };
    for (NodeId id = top + 1; id-- > 0;) {
      if (id > top || !on_path[id] || adjn[id] == kNoNode || id == in)
        continue;
      // Snapshot: building adjoint nodes reallocates the tape, so no
      // references into nodes_ may be held across the op calls below.
      const Op op = nodes_[id].op;
      const std::vector<NodeId> ins = nodes_[id].inputs;
      const double a = nodes_[id].a;
      const NodeId g = adjn[id];
      switch (op) {
        case Op::Affine:
          deposit(ins[0], matmul_bt(g, ins[1]));
          break;
        case Op::LeakyRelu: {
          const Tensor& xv = val(ins[0]);
          Tensor m(xv.shape());
          for (std::size_t i = 0; i < xv.size(); ++i)
            m[i] = xv[i] >= 0.0 ? 1.0 : a;
          deposit(ins[0], mul_const(g, std::move(m)));
          break;
        }
        case Op::Dropout: {
          Tensor mask = nodes_[id].aux;
          deposit(ins[0], mul_const(g, std::move(mask)));
          break;
        }
        case Op::ConcatCols: {
          std::size_t off = 0;
          for (NodeId i : ins) {
            const std::size_t w = val(i).cols();
            if (on_path[i]) deposit(i, slice_cols(g, off, off + w));
            off += w;
          }
          break;
        }
        case Op::Square:
          deposit(ins[0], mul(g, scale(ins[0], 2.0)));
          break;
        case Op::Scale:
          deposit(ins[0], scale(g, a));
          break;
        case Op::AddScalar:
          deposit(ins[0], g);
          break;
        case Op::Add:
          deposit(ins[0], g);
          deposit(ins[1], g);
          break;
        case Op::Sub:
          deposit(ins[0], g);
          deposit(ins[1], scale(g, -1.0));
          break;
        case Op::SumCols:
          deposit(ins[0], broadcast_cols(g, val(ins[0]).cols()));
          break;
        case Op::MulConst: {
          Tensor mask = nodes_[id].aux;
          deposit(ins[0], mul_const(g, std::move(mask)));
          break;
        }
        default:
          throw UnsupportedSecondOrderError(
              std::string("input_gradient: op '") + op_name(op) + "'");
      }
    }
    if (adjn[in] == kNoNode)
      throw Error("input_gradient: no gradient reached the input node");
    return adjn[in];
  }

 private:
  const Tensor& val(NodeId id) const { return nodes_.at(id).value; }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_op(Node n) {
    for (NodeId i : n.inputs) n.needs_grad |= nodes_[i].needs_grad;
    return push(std::move(n));
  }

  NodeId binary(Op op, NodeId x, NodeId y) {
    const Tensor& xv = val(x);
    const Tensor& yv = val(y);
    require_same_shape(xv, yv, op_name(op));
    Node nd;
    nd.op = op;
    nd.inputs = {x, y};
    nd.value = Tensor(xv.shape());
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < xv.size(); ++i)
          nd.value[i] = xv[i] + yv[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < xv.size(); ++i)
          nd.value[i] = xv[i] - yv[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < xv.size(); ++i)
          nd.value[i] = xv[i] * yv[i];
        break;
      default:
        throw Error("binary: bad op");
    }
    return push_op(std::move(nd));
  }

  Tensor& grad_slot(NodeId id, std::vector<Tensor>& adj) const {
    if (adj[id].empty()) adj[id] = Tensor(nodes_[id].value.shape(), 0.0);
    return adj[id];
  }

  void accumulate_into_inputs(const Node& nd, const Tensor& g,
                              std::vector<Tensor>& adj) const {
    auto wants = [&](std::size_t k) {
      return nodes_[nd.inputs[k]].needs_grad;
    };
    switch (nd.op) {
      case Op::Affine: {
        const Tensor& xv = val(nd.inputs[0]);
        const Tensor& wv = val(nd.inputs[1]);
        const std::size_t n = xv.rows(), in = xv.cols(), out = wv.cols();
        detail::CMatMap gm(g.data(), n, out);
        if (wants(0)) {
          detail::CMatMap wm(wv.data(), in, out);
          detail::MatMap gx(grad_slot(nd.inputs[0], adj).data(), n, in);
          gx.noalias() += gm * wm.transpose();
        }
        if (wants(1)) {
          detail::CMatMap xm(xv.data(), n, in);
          detail::MatMap gw(grad_slot(nd.inputs[1], adj).data(), in, out);
          gw.noalias() += xm.transpose() * gm;
        }
        if (wants(2)) {
          Tensor& gb = grad_slot(nd.inputs[2], adj);
          for (std::size_t c = 0; c < out; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += g.at(r, c);
            gb[c] += s;
          }
        }
        break;
      }
      case Op::MatmulBT: {
        const Tensor& av = val(nd.inputs[0]);
        const Tensor& wv = val(nd.inputs[1]);
        const std::size_t n = av.rows(), out = av.cols(), in = wv.rows();
        detail::CMatMap gm(g.data(), n, in);
        if (wants(0)) {
          detail::CMatMap wm(wv.data(), in, out);
          detail::MatMap ga(grad_slot(nd.inputs[0], adj).data(), n, out);
          ga.noalias() += gm * wm;
        }
        if (wants(1)) {
          detail::CMatMap am(av.data(), n, out);
          detail::MatMap gw(grad_slot(nd.inputs[1], adj).data(), in, out);
          gw.noalias() += gm.transpose() * am;
        }
        break;
      }
      case Op::BatchNormTrain: {
        const std::size_t n = nd.value.rows(), w = nd.value.cols();
        const Tensor& gv = val(nd.inputs[1]);
        if (wants(1)) {
          Tensor& gg = grad_slot(nd.inputs[1], adj);
          for (std::size_t c = 0; c < w; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r)
              s += g.at(r, c) * nd.aux.at(r, c);
            gg[c] += s;
          }
        }
        if (wants(2)) {
          Tensor& gb = grad_slot(nd.inputs[2], adj);
          for (std::size_t c = 0; c < w; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += g.at(r, c);
            gb[c] += s;
          }
        }
        if (wants(0)) {
          Tensor& gx = grad_slot(nd.inputs[0], adj);
          const double invn = 1.0 / static_cast<double>(n);
          for (std::size_t c = 0; c < w; ++c) {
            double mg = 0.0, mgx = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
              mg += g.at(r, c);
              mgx += g.at(r, c) * nd.aux.at(r, c);
            }
            mg *= invn;
            mgx *= invn;
            const double k = gv[c] * nd.aux2[c];
            for (std::size_t r = 0; r < n; ++r)
              gx.at(r, c) +=
                  k * (g.at(r, c) - mg - nd.aux.at(r, c) * mgx);
          }
        }
        break;
      }
      case Op::BatchNormInfer: {
        const std::size_t n = nd.value.rows(), w = nd.value.cols();
        const Tensor& gv = val(nd.inputs[1]);
        if (wants(1)) {
          Tensor& gg = grad_slot(nd.inputs[1], adj);
          for (std::size_t c = 0; c < w; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r)
              s += g.at(r, c) * nd.aux.at(r, c);
            gg[c] += s;
          }
        }
        if (wants(2)) {
          Tensor& gb = grad_slot(nd.inputs[2], adj);
          for (std::size_t c = 0; c < w; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += g.at(r, c);
            gb[c] += s;
          }
        }
        if (wants(0)) {
          Tensor& gx = grad_slot(nd.inputs[0], adj);
          for (std::size_t c = 0; c < w; ++c) {
            const double k = gv[c] * nd.aux2[c];
            for (std::size_t r = 0; r < n; ++r) gx.at(r, c) += k * g.at(r, c);
          }
        }
        break;
      }
      case Op::LeakyRelu: {
        if (!wants(0)) break;
        const Tensor& xv = val(nd.inputs[0]);
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < xv.size(); ++i)
          gx[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : nd.a);
        break;
      }
      case Op::Slr: {
        const Tensor& xv = val(nd.inputs[0]);
        const double pv = val(nd.inputs[1]).scalar_value();
        const double qv = val(nd.inputs[2]).scalar_value();
        const double s = static_cast<double>(nd.itag);
        if (wants(0)) {
          Tensor& gx = grad_slot(nd.inputs[0], adj);
          for (std::size_t i = 0; i < xv.size(); ++i)
            gx[i] += g[i] * (s * xv[i] >= 0.0 ? pv : qv);
        }
        if (wants(1) || wants(2)) {
          double gp = 0.0, gq = 0.0;
          for (std::size_t i = 0; i < xv.size(); ++i) {
            if (s * xv[i] >= 0.0)
              gp += g[i] * xv[i];
            else
              gq += g[i] * xv[i];
          }
          if (wants(1)) grad_slot(nd.inputs[1], adj)[0] += gp;
          if (wants(2)) grad_slot(nd.inputs[2], adj)[0] += gq;
        }
        break;
      }
      case Op::Softmax: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        const std::size_t n = nd.value.rows(), w = nd.value.cols();
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < w; ++c)
            dot += g.at(r, c) * nd.value.at(r, c);
          for (std::size_t c = 0; c < w; ++c)
            gx.at(r, c) += nd.value.at(r, c) * (g.at(r, c) - dot);
        }
        break;
      }
      case Op::Dropout:
      case Op::MulConst: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * nd.aux[i];
        break;
      }
      case Op::ConcatCols: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
          const Tensor& v = val(nd.inputs[k]);
          if (wants(k)) {
            Tensor& gi = grad_slot(nd.inputs[k], adj);
            for (std::size_t r = 0; r < v.rows(); ++r)
              for (std::size_t c = 0; c < v.cols(); ++c)
                gi.at(r, c) += g.at(r, off + c);
          }
          off += v.cols();
        }
        break;
      }
      case Op::SliceCols: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t r = 0; r < nd.value.rows(); ++r)
          for (std::size_t c = 0; c < nd.value.cols(); ++c)
            gx.at(r, nd.lo + c) += g.at(r, c);
        break;
      }
      case Op::Add: {
        for (std::size_t k = 0; k < 2; ++k)
          if (wants(k)) {
            Tensor& gi = grad_slot(nd.inputs[k], adj);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
          }
        break;
      }
      case Op::Sub: {
        if (wants(0)) {
          Tensor& gi = grad_slot(nd.inputs[0], adj);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        if (wants(1)) {
          Tensor& gi = grad_slot(nd.inputs[1], adj);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& xv = val(nd.inputs[0]);
        const Tensor& yv = val(nd.inputs[1]);
        if (wants(0)) {
          Tensor& gi = grad_slot(nd.inputs[0], adj);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * yv[i];
        }
        if (wants(1)) {
          Tensor& gi = grad_slot(nd.inputs[1], adj);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * xv[i];
        }
        break;
      }
      case Op::Scale: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * nd.a;
        break;
      }
      case Op::AddScalar: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
      }
      case Op::Square: {
        if (!wants(0)) break;
        const Tensor& xv = val(nd.inputs[0]);
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += 2.0 * xv[i] * g[i];
        break;
      }
      case Op::Sqrt: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * 0.5 / nd.value[i];
        break;
      }
      case Op::SumCols: {
        if (!wants(0)) break;
        const Tensor& xv = val(nd.inputs[0]);
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t r = 0; r < xv.rows(); ++r)
          for (std::size_t c = 0; c < xv.cols(); ++c)
            gx.at(r, c) += g[r];
        break;
      }
      case Op::BroadcastCols: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t r = 0; r < nd.value.rows(); ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < nd.value.cols(); ++c)
            s += g.at(r, c);
          gx[r] += s;
        }
        break;
      }
      case Op::MeanAll: {
        if (!wants(0)) break;
        const Tensor& xv = val(nd.inputs[0]);
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        const double k = g[0] / static_cast<double>(xv.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += k;
        break;
      }
      case Op::DotConst: {
        if (!wants(0)) break;
        Tensor& gx = grad_slot(nd.inputs[0], adj);
        for (std::size_t i = 0; i < gx.size(); ++i)
          gx[i] += g[0] * nd.aux[i];
        break;
      }
      case Op::Leaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, Parameter*>> registry_;
};

}  // namespace fcgan
