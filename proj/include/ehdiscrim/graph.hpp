#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehdiscrim/rng.hpp"
#include "ehdiscrim/tensor.hpp"

namespace ehd {

// Exact-erf GELU: x * Phi(x).
template <typename S>
inline S gelu_scalar(S x) {
  return static_cast<S>(0.5) * x *
         (static_cast<S>(1) +
          static_cast<S>(std::erf(static_cast<double>(x) / std::sqrt(2.0))));
}

template <typename S>
inline S gelu_grad_scalar(S x) {
  double xd = static_cast<double>(x);
  double phi = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * std::numbers::pi);
  double Phi = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  return static_cast<S>(Phi + xd * phi);
}

// Reverse-mode tape over Tensors. Ops evaluate eagerly at node creation;
// backward() walks the tape in reverse. Every op output is scanned for
// NaN/Inf and aborts naming the op — silent corruption is worse than failure.
template <typename S>
class Graph {
 public:
  using Id = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- leaves ----

  Id input(Tensor<S> v, const std::string& name = "input") {
    check_finite(v, name);
    return push(name, std::move(v), {}, nullptr);
  }

  // Binds an external parameter; repeated calls with the same parameter
  // return the same node so gradients accumulate once per backward.
  Id param(Parameter<S>& p) {
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].bound == &p) return static_cast<Id>(i);
    check_finite(p.value, "param " + p.name);
    Id id = push("param " + p.name, p.value, {}, nullptr);
    nodes_[id].bound = &p;
    return id;
  }

  // ---- shape-preserving elementwise ----

  Id add(Id a, Id b) {
    const auto &A = val(a), &B = val(b);
    require(A.same_shape(B), "add", "shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor<S> out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
    return push("add", std::move(out), {a, b}, [](Graph& g, Node& n) {
      g.accumulate(n.inputs[0], n.grad.data);
      g.accumulate(n.inputs[1], n.grad.data);
    });
  }

  Id sub(Id a, Id b) {
    const auto &A = val(a), &B = val(b);
    require(A.same_shape(B), "sub", "shape mismatch");
    Tensor<S> out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= B.data[i];
    return push("sub", std::move(out), {a, b}, [](Graph& g, Node& n) {
      g.accumulate(n.inputs[0], n.grad.data);
      auto neg = n.grad.data;
      for (auto& v : neg) v = -v;
      g.accumulate(n.inputs[1], neg);
    });
  }

  Id mul(Id a, Id b) {
    const auto &A = val(a), &B = val(b);
    require(A.same_shape(B), "mul", "shape mismatch");
    Tensor<S> out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
    return push("mul", std::move(out), {a, b}, [](Graph& g, Node& n) {
      const auto &A2 = g.val(n.inputs[0]), &B2 = g.val(n.inputs[1]);
      std::vector<S> da(n.grad.numel()), db(n.grad.numel());
      for (size_t i = 0; i < n.grad.numel(); ++i) {
        da[i] = n.grad.data[i] * B2.data[i];
        db[i] = n.grad.data[i] * A2.data[i];
      }
      g.accumulate(n.inputs[0], da);
      g.accumulate(n.inputs[1], db);
    });
  }

  Id scale(Id a, S c) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v *= c;
    return push("scale", std::move(out), {a}, [c](Graph& g, Node& n) {
      std::vector<S> da(n.grad.numel());
      for (size_t i = 0; i < da.size(); ++i) da[i] = n.grad.data[i] * c;
      g.accumulate(n.inputs[0], da);
    });
  }

  Id gelu(Id a) {
    Tensor<S> out = val(a);
    for (auto& v : out.data) v = gelu_scalar(v);
    return push("gelu", std::move(out), {a}, [](Graph& g, Node& n) {
      const auto& A = g.val(n.inputs[0]);
      std::vector<S> da(n.grad.numel());
      for (size_t i = 0; i < da.size(); ++i)
        da[i] = n.grad.data[i] * gelu_grad_scalar(A.data[i]);
      g.accumulate(n.inputs[0], da);
    });
  }

  // ---- linear algebra ----

  Id matmul(Id a, Id b) {
    const auto &A = val(a), &B = val(b);
    require(A.rank() == 2 && B.rank() == 2, "matmul", "rank != 2");
    require(A.cols() == B.rows(), "matmul",
            "inner extents disagree " + A.shape_str() + " vs " + B.shape_str());
    Tensor<S> out = Tensor<S>::zeros({A.rows(), B.cols()});
    matmul_into(out, A, B, false, false);
    return push("matmul", std::move(out), {a, b}, [](Graph& g, Node& n) {
      const auto &A2 = g.val(n.inputs[0]), &B2 = g.val(n.inputs[1]);
      Tensor<S> da = Tensor<S>::zeros(A2.shape);
      Tensor<S> db = Tensor<S>::zeros(B2.shape);
      matmul_into(da, n.grad, B2, false, true);   // dC * B^T
      matmul_into(db, A2, n.grad, true, false);   // A^T * dC
      g.accumulate(n.inputs[0], da.data);
      g.accumulate(n.inputs[1], db.data);
    });
  }

  Id transpose(Id a) {
    const auto& A = val(a);
    require(A.rank() == 2, "transpose", "rank != 2");
    Tensor<S> out = Tensor<S>::zeros({A.cols(), A.rows()});
    for (size_t r = 0; r < A.rows(); ++r)
      for (size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
    return push("transpose", std::move(out), {a}, [](Graph& g, Node& n) {
      const auto& A2 = g.val(n.inputs[0]);
      std::vector<S> da(A2.numel());
      for (size_t r = 0; r < A2.rows(); ++r)
        for (size_t c = 0; c < A2.cols(); ++c)
          da[r * A2.cols() + c] = n.grad.at(c, r);
      g.accumulate(n.inputs[0], da);
    });
  }

  // [m x n] + [n] broadcast over rows (bias add).
  Id add_row(Id m, Id row) {
    const auto &M = val(m), &R = val(row);
    require(M.rank() == 2 && R.numel() == M.cols(), "add_row", "extent mismatch");
    Tensor<S> out = M;
    for (size_t r = 0; r < M.rows(); ++r)
      for (size_t c = 0; c < M.cols(); ++c) out.at(r, c) += R.data[c];
    return push("add_row", std::move(out), {m, row}, [](Graph& g, Node& n) {
      g.accumulate(n.inputs[0], n.grad.data);
      const size_t cols = n.grad.cols();
      std::vector<S> dr(cols, S(0));
      for (size_t r = 0; r < n.grad.rows(); ++r)
        for (size_t c = 0; c < cols; ++c) dr[c] += n.grad.at(r, c);
      g.accumulate(n.inputs[1], dr);
    });
  }

  // ---- row-wise nonlinearities ----

  Id softmax_rows(Id a) {
    const auto& A = val(a);
    require(A.rank() == 2, "softmax_rows", "rank != 2");
    Tensor<S> out = A;
    for (size_t r = 0; r < A.rows(); ++r) {
      S* x = &out.data[r * A.cols()];
      S mx = x[0];
      for (size_t c = 1; c < A.cols(); ++c) mx = std::max(mx, x[c]);
      S sum = S(0);
      for (size_t c = 0; c < A.cols(); ++c) {
        x[c] = static_cast<S>(std::exp(static_cast<double>(x[c] - mx)));
        sum += x[c];
      }
      for (size_t c = 0; c < A.cols(); ++c) x[c] /= sum;
    }
    return push("softmax_rows", std::move(out), {a}, [](Graph& g, Node& n) {
      const auto& Y = n.value;
      std::vector<S> da(Y.numel());
      for (size_t r = 0; r < Y.rows(); ++r) {
        S dot = S(0);
        for (size_t c = 0; c < Y.cols(); ++c)
          dot += n.grad.at(r, c) * Y.at(r, c);
        for (size_t c = 0; c < Y.cols(); ++c)
          da[r * Y.cols() + c] = Y.at(r, c) * (n.grad.at(r, c) - dot);
      }
      g.accumulate(n.inputs[0], da);
    });
  }

  // Per-row zero-mean unit-variance normalization, scaled and shifted.
  // x may be rank-1 (one row) or rank-2.
  Id layer_norm_rows(Id x, Id gain, Id bias, S eps) {
    const auto &X = val(x), &G = val(gain), &B = val(bias);
    require(eps > S(0), "layer_norm", "eps must be > 0");
    const size_t cols = X.rank() == 2 ? X.cols() : X.numel();
    const size_t rows = X.rank() == 2 ? X.rows() : 1;
    require(G.numel() == cols && B.numel() == cols, "layer_norm", "length mismatch");
    Tensor<S> out = X;
    for (size_t r = 0; r < rows; ++r) {
      S* row = &out.data[r * cols];
      S mean = S(0);
      for (size_t c = 0; c < cols; ++c) mean += row[c];
      mean /= static_cast<S>(cols);
      S var = S(0);
      for (size_t c = 0; c < cols; ++c) {
        S d = row[c] - mean;
        var += d * d;
      }
      var /= static_cast<S>(cols);
      S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var + eps)));
      for (size_t c = 0; c < cols; ++c)
        row[c] = G.data[c] * ((row[c] - mean) * inv) + B.data[c];
    }
    return push("layer_norm", std::move(out), {x, gain, bias},
                [eps, rows, cols](Graph& g, Node& n) {
      const auto &X2 = g.val(n.inputs[0]), &G2 = g.val(n.inputs[1]);
      std::vector<S> dx(X2.numel(), S(0)), dg(cols, S(0)), db(cols, S(0));
      for (size_t r = 0; r < rows; ++r) {
        const S* xr = &X2.data[r * cols];
        const S* go = &n.grad.data[r * cols];
        S mean = S(0);
        for (size_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= static_cast<S>(cols);
        S var = S(0);
        for (size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<S>(cols);
        S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var + eps)));
        // dxhat, then the two reduction terms of the layer-norm backward
        S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
        for (size_t c = 0; c < cols; ++c) {
          S xhat = (xr[c] - mean) * inv;
          S dxhat = go[c] * G2.data[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          dg[c] += go[c] * xhat;
          db[c] += go[c];
        }
        for (size_t c = 0; c < cols; ++c) {
          S xhat = (xr[c] - mean) * inv;
          S dxhat = go[c] * G2.data[c];
          dx[r * cols + c] =
              inv * (dxhat - sum_dxhat / static_cast<S>(cols) -
                     xhat * sum_dxhat_xhat / static_cast<S>(cols));
        }
      }
      g.accumulate(n.inputs[0], dx);
      g.accumulate(n.inputs[1], dg);
      g.accumulate(n.inputs[2], db);
    });
  }

  // Rows scaled to unit L2 norm.
  Id l2_normalize_rows(Id x) {
    const auto& X = val(x);
    require(X.rank() == 2, "l2_normalize_rows", "rank != 2");
    Tensor<S> out = X;
    for (size_t r = 0; r < X.rows(); ++r) {
      double sq = 0.0;
      for (size_t c = 0; c < X.cols(); ++c)
        sq += static_cast<double>(X.at(r, c)) * static_cast<double>(X.at(r, c));
      double norm = std::sqrt(sq);
      require(norm > 1e-30, "l2_normalize_rows", "zero-norm row");
      for (size_t c = 0; c < X.cols(); ++c)
        out.at(r, c) = static_cast<S>(static_cast<double>(X.at(r, c)) / norm);
    }
    return push("l2_normalize_rows", std::move(out), {x}, [](Graph& g, Node& n) {
      const auto& X2 = g.val(n.inputs[0]);
      const auto& U = n.value;
      std::vector<S> dx(X2.numel());
      for (size_t r = 0; r < X2.rows(); ++r) {
        double sq = 0.0;
        for (size_t c = 0; c < X2.cols(); ++c)
          sq += static_cast<double>(X2.at(r, c)) * static_cast<double>(X2.at(r, c));
        double norm = std::sqrt(sq);
        S dot = S(0);
        for (size_t c = 0; c < X2.cols(); ++c)
          dot += n.grad.at(r, c) * U.at(r, c);
        for (size_t c = 0; c < X2.cols(); ++c)
          dx[r * X2.cols() + c] = static_cast<S>(
              (n.grad.at(r, c) - dot * U.at(r, c)) / static_cast<S>(norm));
      }
      g.accumulate(n.inputs[0], dx);
    });
  }

  // ---- gather / layout ----

  // Rows of a table selected by ids (embedding lookup). Backward scatter-adds.
  Id embed(Id table, std::vector<int> ids) {
    const auto& T = val(table);
    require(T.rank() == 2, "embed", "table rank != 2");
    for (int id : ids)
      require(id >= 0 && static_cast<size_t>(id) < T.rows(), "embed",
              "id out of range");
    Tensor<S> out = Tensor<S>::zeros({ids.size(), T.cols()});
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(&T.data[static_cast<size_t>(ids[i]) * T.cols()], T.cols(),
                  &out.data[i * T.cols()]);
    return push("embed", std::move(out), {table},
                [ids = std::move(ids)](Graph& g, Node& n) {
      const auto& T2 = g.val(n.inputs[0]);
      std::vector<S> dt(T2.numel(), S(0));
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t c = 0; c < T2.cols(); ++c)
          dt[static_cast<size_t>(ids[i]) * T2.cols() + c] += n.grad.at(i, c);
      g.accumulate(n.inputs[0], dt);
    });
  }

  Id gather_rows(Id x, std::vector<int> rows) { return embed(x, std::move(rows)); }

  Id slice_cols(Id x, size_t start, size_t len) {
    const auto& X = val(x);
    require(X.rank() == 2 && start + len <= X.cols(), "slice_cols", "out of range");
    Tensor<S> out = Tensor<S>::zeros({X.rows(), len});
    for (size_t r = 0; r < X.rows(); ++r)
      std::copy_n(&X.data[r * X.cols() + start], len, &out.data[r * len]);
    return push("slice_cols", std::move(out), {x}, [start, len](Graph& g, Node& n) {
      const auto& X2 = g.val(n.inputs[0]);
      std::vector<S> dx(X2.numel(), S(0));
      for (size_t r = 0; r < X2.rows(); ++r)
        for (size_t c = 0; c < len; ++c)
          dx[r * X2.cols() + start + c] = n.grad.at(r, c);
      g.accumulate(n.inputs[0], dx);
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    size_t rows = val(parts[0]).rows(), cols = 0;
    for (Id p : parts) {
      require(val(p).rank() == 2 && val(p).rows() == rows, "concat_cols",
              "row extents disagree");
      cols += val(p).cols();
    }
    Tensor<S> out = Tensor<S>::zeros({rows, cols});
    size_t off = 0;
    for (Id p : parts) {
      const auto& P = val(p);
      for (size_t r = 0; r < rows; ++r)
        std::copy_n(&P.data[r * P.cols()], P.cols(), &out.data[r * cols + off]);
      off += P.cols();
    }
    return push("concat_cols", std::move(out), parts, [](Graph& g, Node& n) {
      size_t off2 = 0;
      const size_t cols2 = n.grad.cols();
      for (Id p : n.inputs) {
        const auto& P = g.val(p);
        std::vector<S> dp(P.numel());
        for (size_t r = 0; r < P.rows(); ++r)
          std::copy_n(&n.grad.data[r * cols2 + off2], P.cols(), &dp[r * P.cols()]);
        g.accumulate(p, dp);
        off2 += P.cols();
      }
    });
  }

  Id concat_rows(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_rows", "no inputs");
    size_t cols = val(parts[0]).cols(), rows = 0;
    for (Id p : parts) {
      require(val(p).rank() == 2 && val(p).cols() == cols, "concat_rows",
              "column extents disagree");
      rows += val(p).rows();
    }
    Tensor<S> out = Tensor<S>::zeros({rows, cols});
    size_t off = 0;
    for (Id p : parts) {
      const auto& P = val(p);
      std::copy_n(P.data.data(), P.numel(), &out.data[off]);
      off += P.numel();
    }
    return push("concat_rows", std::move(out), parts, [](Graph& g, Node& n) {
      size_t off2 = 0;
      for (Id p : n.inputs) {
        const auto& P = g.val(p);
        std::vector<S> dp(n.grad.data.begin() + off2,
                          n.grad.data.begin() + off2 + P.numel());
        g.accumulate(p, dp);
        off2 += P.numel();
      }
    });
  }

  // Inverted dropout; identity when rate == 0. Mask order comes from the
  // caller's RNG stream, so fixed seeds give bit-identical runs.
  Id dropout(Id x, S rate, Rng& rng) {
    if (rate == S(0)) return x;
    require(rate > S(0) && rate < S(1), "dropout", "rate out of (0,1)");
    const auto& X = val(x);
    auto mask = std::make_shared<std::vector<S>>(X.numel());
    const S keep_scale = S(1) / (S(1) - rate);
    for (size_t i = 0; i < X.numel(); ++i)
      (*mask)[i] = rng.uniform01() < static_cast<double>(rate) ? S(0) : keep_scale;
    Tensor<S> out = X;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= (*mask)[i];
    return push("dropout", std::move(out), {x}, [mask](Graph& g, Node& n) {
      std::vector<S> dx(n.grad.numel());
      for (size_t i = 0; i < dx.size(); ++i) dx[i] = n.grad.data[i] * (*mask)[i];
      g.accumulate(n.inputs[0], dx);
    });
  }

  // ---- reductions / losses ----

  Id sum(Id x) {
    const auto& X = val(x);
    S s = S(0);
    for (S v : X.data) s += v;
    return push("sum", Tensor<S>::scalar(s), {x}, [](Graph& g, Node& n) {
      const auto& X2 = g.val(n.inputs[0]);
      std::vector<S> dx(X2.numel(), n.grad.data[0]);
      g.accumulate(n.inputs[0], dx);
    });
  }

  // Weighted sum of scalar nodes.
  Id weighted_sum(const std::vector<std::pair<S, Id>>& terms) {
    require(!terms.empty(), "weighted_sum", "no terms");
    S s = S(0);
    std::vector<Id> ins;
    std::vector<S> ws;
    for (auto& [w, id] : terms) {
      require(val(id).numel() == 1, "weighted_sum", "non-scalar term");
      s += w * val(id).data[0];
      ins.push_back(id);
      ws.push_back(w);
    }
    return push("weighted_sum", Tensor<S>::scalar(s), ins,
                [ws = std::move(ws)](Graph& g, Node& n) {
      for (size_t i = 0; i < n.inputs.size(); ++i)
        g.accumulate(n.inputs[i], {ws[i] * n.grad.data[0]});
    });
  }

  // Sum over rows of -log softmax(logits)[target]; the log-sum-exp guards
  // against zero target probabilities.
  Id cross_entropy_rows(Id logits, std::vector<int> targets) {
    const auto& X = val(logits);
    require(X.rank() == 2 && targets.size() == X.rows(), "cross_entropy_rows",
            "target count != rows");
    for (int t : targets)
      require(t >= 0 && static_cast<size_t>(t) < X.cols(), "cross_entropy_rows",
              "target out of range");
    auto probs = std::make_shared<Tensor<S>>(X);
    S loss = S(0);
    for (size_t r = 0; r < X.rows(); ++r) {
      S* row = &probs->data[r * X.cols()];
      S mx = row[0];
      for (size_t c = 1; c < X.cols(); ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (size_t c = 0; c < X.cols(); ++c)
        sum += std::exp(static_cast<double>(row[c] - mx));
      double lse = static_cast<double>(mx) + std::log(sum);
      loss += static_cast<S>(lse - static_cast<double>(
                                       X.at(r, static_cast<size_t>(targets[r]))));
      for (size_t c = 0; c < X.cols(); ++c)
        row[c] = static_cast<S>(
            std::exp(static_cast<double>(X.at(r, c)) - lse));
    }
    return push("cross_entropy_rows", Tensor<S>::scalar(loss), {logits},
                [probs, targets = std::move(targets)](Graph& g, Node& n) {
      std::vector<S> dx = probs->data;
      const size_t cols = probs->cols();
      for (size_t r = 0; r < probs->rows(); ++r)
        dx[r * cols + static_cast<size_t>(targets[r])] -= S(1);
      for (auto& v : dx) v *= n.grad.data[0];
      g.accumulate(n.inputs[0], dx);
    });
  }

  // Sum of binary cross-entropies on logits, labels in {0,1}; computed in the
  // max(z,0) - z*y + log1p(exp(-|z|)) form for stability.
  Id bce_logits(Id logits, std::vector<int> labels) {
    const auto& Z = val(logits);
    require(labels.size() == Z.numel(), "bce_logits", "label count mismatch");
    S loss = S(0);
    for (size_t i = 0; i < Z.numel(); ++i) {
      double z = static_cast<double>(Z.data[i]);
      double y = static_cast<double>(labels[i]);
      loss += static_cast<S>(std::max(z, 0.0) - z * y +
                             std::log1p(std::exp(-std::abs(z))));
    }
    return push("bce_logits", Tensor<S>::scalar(loss), {logits},
                [labels = std::move(labels)](Graph& g, Node& n) {
      const auto& Z2 = g.val(n.inputs[0]);
      std::vector<S> dz(Z2.numel());
      for (size_t i = 0; i < Z2.numel(); ++i) {
        double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(Z2.data[i])));
        dz[i] = static_cast<S>((sig - static_cast<double>(labels[i]))) *
                n.grad.data[0];
      }
      g.accumulate(n.inputs[0], dz);
    });
  }

  // ---- access / backward ----

  const Tensor<S>& val(Id id) const { return nodes_[check_id(id)].value; }

  // Gradient of the last backward() w.r.t. this node (zeros if untouched).
  Tensor<S> grad(Id id) const {
    const Node& n = nodes_[check_id(id)];
    return n.grad.numel() ? n.grad : Tensor<S>::zeros(n.value.shape);
  }

  size_t size() const { return nodes_.size(); }

  // Populates gradients for all trainable bound parameters. Frozen leaves
  // receive none.
  void backward(Id loss) {
    Node& ln = nodes_[check_id(loss)];
    if (ln.value.numel() != 1)
      throw std::invalid_argument("backward: loss is not scalar, shape " +
                                  ln.value.shape_str());
    for (auto& n : nodes_) n.grad = Tensor<S>();
    ln.grad = Tensor<S>::scalar(S(1));
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.numel() == 0) continue;  // no path from the loss
      if (!n.grad.all_finite())
        throw std::runtime_error("non-finite gradient at op '" + n.op + "'");
      if (n.back) n.back(*this, n);
      if (n.bound && n.bound->trainable) {
        for (size_t k = 0; k < n.grad.numel(); ++k)
          n.bound->grad.data[k] += n.grad.data[k];
      }
    }
  }

 private:
  struct Node {
    std::string op;
    Tensor<S> value;
    Tensor<S> grad;  // empty until touched by backward
    std::vector<Id> inputs;
    std::function<void(Graph&, Node&)> back;
    Parameter<S>* bound = nullptr;
  };

  Id push(std::string op, Tensor<S> value, std::vector<Id> inputs,
          std::function<void(Graph&, Node&)> back) {
    if (!value.all_finite())
      throw std::runtime_error("non-finite value produced by op '" + op + "'");
    for (Id i : inputs) check_id(i);
    nodes_.push_back(Node{std::move(op), std::move(value), Tensor<S>(),
                          std::move(inputs), std::move(back), nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id check_id(Id id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
      throw std::logic_error("Graph: invalid node id");
    return id;
  }

  void accumulate(Id id, const std::vector<S>& g) {
    Node& n = nodes_[check_id(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<S>::zeros(n.value.shape);
    if (g.size() != n.grad.numel())
      throw std::logic_error("Graph: gradient size mismatch at op '" + n.op + "'");
    for (size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g[i];
  }

  static void check_finite(const Tensor<S>& t, const std::string& what) {
    if (!t.all_finite())
      throw std::runtime_error("non-finite value in " + what);
  }

  static void require(bool ok, const char* op, const std::string& msg) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": " + msg);
  }

  // C (+)= op(A) * op(B); cache-friendly i-k-j loops.
  static void matmul_into(Tensor<S>& C, const Tensor<S>& A, const Tensor<S>& B,
                          bool ta, bool tb) {
    const size_t m = ta ? A.cols() : A.rows();
    const size_t kk = ta ? A.rows() : A.cols();
    const size_t nn = tb ? B.rows() : B.cols();
    for (size_t i = 0; i < m; ++i) {
      S* crow = &C.data[i * nn];
      for (size_t k = 0; k < kk; ++k) {
        const S a = ta ? A.at(k, i) : A.at(i, k);
        if (!tb) {
          const S* brow = &B.data[k * nn];
          for (size_t j = 0; j < nn; ++j) crow[j] += a * brow[j];
        } else {
          for (size_t j = 0; j < nn; ++j) crow[j] += a * B.at(j, k);
        }
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace ehd
