#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "disret/errors.hpp"
#include "disret/matrix.hpp"

namespace disret {

// Handle to a node on a Tape.
struct Ref {
  std::size_t i = static_cast<std::size_t>(-1);
};

// Reverse-mode tape. Ops append nodes in topological order; backward()
// replays the recorded adjoint closures in reverse creation order.
// A tape and its nodes are confined to one thread.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    // adjoint: receives this tape and this node (g = node.grad)
    std::function<void(Tape&, const Node&)> back;
  };

  Ref leaf(Matrix m) {
    Node n;
    n.grad = Matrix(m.rows, m.cols);
    n.value = std::move(m);
    nodes_.push_back(std::move(n));
    return Ref{nodes_.size() - 1};
  }
  Ref constant(Matrix m) { return leaf(std::move(m)); }

  const Matrix& value(Ref r) const { return nodes_[r.i].value; }
  const Matrix& grad(Ref r) const { return nodes_[r.i].grad; }
  double scalar(Ref r) const {
    const Matrix& m = nodes_[r.i].value;
    if (m.size() != 1)
      throw ContractError("scalar: node has shape " + m.shape_str());
    return m.v[0];
  }
  std::size_t size() const { return nodes_.size(); }

  // out[i,j] = sum_k x[i,k] w[k,j] + b[0,j]
  Ref linear(Ref x, Ref w, Ref b) {
    const Matrix& xv = nodes_[x.i].value;
    const Matrix& wv = nodes_[w.i].value;
    const Matrix& bv = nodes_[b.i].value;
    if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols)
      throw DimensionError("linear: input " + xv.shape_str() + ", weight " +
                           wv.shape_str() + ", bias " + bv.shape_str());
    Matrix out(xv.rows, wv.cols);
    for (std::size_t i = 0; i < xv.rows; ++i) {
      double* orow = &out.v[i * out.cols];
      for (std::size_t j = 0; j < out.cols; ++j) orow[j] = bv.v[j];
      const double* xrow = &xv.v[i * xv.cols];
      for (std::size_t k = 0; k < xv.cols; ++k) {
        const double xik = xrow[k];
        const double* wrow = &wv.v[k * wv.cols];
        for (std::size_t j = 0; j < out.cols; ++j) orow[j] += xik * wrow[j];
      }
    }
    return push(std::move(out), [x, w, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& xv = t.nodes_[x.i].value;
      const Matrix& wv = t.nodes_[w.i].value;
      Matrix& gx = t.nodes_[x.i].grad;
      Matrix& gw = t.nodes_[w.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t i = 0; i < xv.rows; ++i) {
        const double* grow = &g.v[i * g.cols];
        double* gxrow = &gx.v[i * gx.cols];
        const double* xrow = &xv.v[i * xv.cols];
        for (std::size_t k = 0; k < xv.cols; ++k) {
          const double* wrow = &wv.v[k * wv.cols];
          double acc = 0.0;
          for (std::size_t j = 0; j < g.cols; ++j) acc += grow[j] * wrow[j];
          gxrow[k] += acc;
          const double xik = xrow[k];
          double* gwrow = &gw.v[k * gw.cols];
          for (std::size_t j = 0; j < g.cols; ++j) gwrow[j] += xik * grow[j];
        }
        for (std::size_t j = 0; j < g.cols; ++j) gb.v[j] += grow[j];
      }
    });
  }

  Ref leaky_relu(Ref x, double slope) {
    const Matrix& xv = nodes_[x.i].value;
    Matrix out = xv;
    for (double& e : out.v)
      if (e < 0.0) e *= slope;
    return push(std::move(out), [x, slope](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& xv = t.nodes_[x.i].value;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        gx.v[k] += g.v[k] * (xv.v[k] >= 0.0 ? 1.0 : slope);
    });
  }

  Ref relu(Ref x) {
    const Matrix& xv = nodes_[x.i].value;
    Matrix out = xv;
    for (double& e : out.v)
      if (e < 0.0) e = 0.0;
    return push(std::move(out), [x](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& xv = t.nodes_[x.i].value;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        gx.v[k] += g.v[k] * (xv.v[k] > 0.0 ? 1.0 : 0.0);
    });
  }

  Ref concat_cols(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    if (av.rows != bv.rows)
      throw DimensionError("concat_cols: " + av.shape_str() + " vs " +
                           bv.shape_str());
    Matrix out(av.rows, av.cols + bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
      for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = av.at(i, j);
      for (std::size_t j = 0; j < bv.cols; ++j)
        out.at(i, av.cols + j) = bv.at(i, j);
    }
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t i = 0; i < ga.rows; ++i) {
        for (std::size_t j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, j);
        for (std::size_t j = 0; j < gb.cols; ++j)
          gb.at(i, j) += g.at(i, ga.cols + j);
      }
    });
  }

  Ref add(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    if (!av.same_shape(bv))
      throw DimensionError("add: " + av.shape_str() + " vs " + bv.shape_str());
    Matrix out = av;
    for (std::size_t k = 0; k < out.size(); ++k) out.v[k] += bv.v[k];
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) {
        ga.v[k] += g.v[k];
        gb.v[k] += g.v[k];
      }
    });
  }

  Ref sub(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    if (!av.same_shape(bv))
      throw DimensionError("sub: " + av.shape_str() + " vs " + bv.shape_str());
    Matrix out = av;
    for (std::size_t k = 0; k < out.size(); ++k) out.v[k] -= bv.v[k];
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) {
        ga.v[k] += g.v[k];
        gb.v[k] -= g.v[k];
      }
    });
  }

  Ref scale(Ref x, double c) {
    Matrix out = nodes_[x.i].value;
    for (double& e : out.v) e *= c;
    return push(std::move(out), [x, c](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) gx.v[k] += c * g.v[k];
    });
  }

  Ref add_const(Ref x, double c) {
    Matrix out = nodes_[x.i].value;
    for (double& e : out.v) e += c;
    return push(std::move(out), [x](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) gx.v[k] += g.v[k];
    });
  }

  Ref sum(Ref x) {
    const Matrix& xv = nodes_[x.i].value;
    double acc = 0.0;
    for (double e : xv.v) acc += e;
    Matrix out(1, 1);
    out.v[0] = acc;
    return push(std::move(out), [x](Tape& t, const Node& self) {
      const double g = self.grad.v[0];
      Matrix& gx = t.nodes_[x.i].grad;
      for (double& e : gx.v) e += g;
    });
  }

  Ref mean(Ref x) {
    const std::size_t n = nodes_[x.i].value.size();
    return scale(sum(x), 1.0 / static_cast<double>(n));
  }

  // Row-wise Euclidean distance; nx1 output. Subgradient 0 where the
  // distance is below 1e-12.
  Ref l2_distance(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    check_pairwise(av, bv, "l2_distance");
    Matrix out(av.rows, 1);
    for (std::size_t i = 0; i < av.rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j) {
        const double d = av.at(i, j) - bv.at(i, j);
        acc += d * d;
      }
      out.v[i] = std::sqrt(acc);
    }
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& out = self.value;
      const Matrix& av = t.nodes_[a.i].value;
      const Matrix& bv = t.nodes_[b.i].value;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t i = 0; i < av.rows; ++i) {
        const double d = out.v[i];
        if (d < 1e-12) continue;
        const double s = g.v[i] / d;
        for (std::size_t j = 0; j < av.cols; ++j) {
          const double diff = (av.at(i, j) - bv.at(i, j)) * s;
          ga.at(i, j) += diff;
          gb.at(i, j) -= diff;
        }
      }
    });
  }

  // Row-wise L1 distance; nx1 output. sign(0) = 0.
  Ref l1_distance(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    check_pairwise(av, bv, "l1_distance");
    Matrix out(av.rows, 1);
    for (std::size_t i = 0; i < av.rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j)
        acc += std::abs(av.at(i, j) - bv.at(i, j));
      out.v[i] = acc;
    }
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& av = t.nodes_[a.i].value;
      const Matrix& bv = t.nodes_[b.i].value;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t i = 0; i < av.rows; ++i) {
        for (std::size_t j = 0; j < av.cols; ++j) {
          const double d = av.at(i, j) - bv.at(i, j);
          const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          ga.at(i, j) += g.v[i] * s;
          gb.at(i, j) -= g.v[i] * s;
        }
      }
    });
  }

  // Row-wise cosine similarity; nx1 output. Norm product floored at 1e-12;
  // a zero row is a degenerate input.
  Ref cosine_similarity(Ref a, Ref b) {
    const Matrix& av = nodes_[a.i].value;
    const Matrix& bv = nodes_[b.i].value;
    check_pairwise(av, bv, "cosine_similarity");
    Matrix out(av.rows, 1);
    for (std::size_t i = 0; i < av.rows; ++i) {
      const double na = l2_norm(&av.v[i * av.cols], av.cols);
      const double nb = l2_norm(&bv.v[i * bv.cols], bv.cols);
      if (na < 1e-12 || nb < 1e-12)
        throw DegenerateInputError(
            "cosine_similarity: zero-norm vector at row " + std::to_string(i));
      double dotv = 0.0;
      for (std::size_t j = 0; j < av.cols; ++j)
        dotv += av.at(i, j) * bv.at(i, j);
      out.v[i] = dotv / std::max(na * nb, 1e-12);
    }
    return push(std::move(out), [a, b](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& out = self.value;
      const Matrix& av = t.nodes_[a.i].value;
      const Matrix& bv = t.nodes_[b.i].value;
      Matrix& ga = t.nodes_[a.i].grad;
      Matrix& gb = t.nodes_[b.i].grad;
      for (std::size_t i = 0; i < av.rows; ++i) {
        const double na = l2_norm(&av.v[i * av.cols], av.cols);
        const double nb = l2_norm(&bv.v[i * bv.cols], bv.cols);
        const double denom = std::max(na * nb, 1e-12);
        const double c = out.v[i];
        const double gi = g.v[i];
        for (std::size_t j = 0; j < av.cols; ++j) {
          ga.at(i, j) +=
              gi * (bv.at(i, j) / denom - c * av.at(i, j) / (na * na));
          gb.at(i, j) +=
              gi * (av.at(i, j) / denom - c * bv.at(i, j) / (nb * nb));
        }
      }
    });
  }

  Ref sigmoid(Ref x) {
    const Matrix& xv = nodes_[x.i].value;
    Matrix out(xv.rows, xv.cols);
    for (std::size_t k = 0; k < xv.size(); ++k) out.v[k] = sigmoid1(xv.v[k]);
    return push(std::move(out), [x](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& out = self.value;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        gx.v[k] += g.v[k] * out.v[k] * (1.0 - out.v[k]);
    });
  }

  // Standalone log of a probability; input clamped to [1e-7, 1-1e-7],
  // with zero gradient in the clamped region.
  Ref log(Ref x) {
    const Matrix& xv = nodes_[x.i].value;
    Matrix out(xv.rows, xv.cols);
    for (std::size_t k = 0; k < xv.size(); ++k)
      out.v[k] = std::log(clamp_prob(xv.v[k]));
    return push(std::move(out), [x](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& xv = t.nodes_[x.i].value;
      Matrix& gx = t.nodes_[x.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double xk = xv.v[k];
        if (xk > 1e-7 && xk < 1.0 - 1e-7) gx.v[k] += g.v[k] / xk;
      }
    });
  }

  // log(sigmoid(s)) = -softplus(-s), numerically stable.
  Ref log_sigmoid(Ref s) {
    const Matrix& sv = nodes_[s.i].value;
    Matrix out(sv.rows, sv.cols);
    for (std::size_t k = 0; k < sv.size(); ++k) out.v[k] = -softplus(-sv.v[k]);
    return push(std::move(out), [s](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& sv = t.nodes_[s.i].value;
      Matrix& gs = t.nodes_[s.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        gs.v[k] += g.v[k] * sigmoid1(-sv.v[k]);
    });
  }

  // log(1 - sigmoid(s)) = -softplus(s).
  Ref log_one_minus_sigmoid(Ref s) {
    const Matrix& sv = nodes_[s.i].value;
    Matrix out(sv.rows, sv.cols);
    for (std::size_t k = 0; k < sv.size(); ++k) out.v[k] = -softplus(sv.v[k]);
    return push(std::move(out), [s](Tape& t, const Node& self) {
      const Matrix& g = self.grad;
      const Matrix& sv = t.nodes_[s.i].value;
      Matrix& gs = t.nodes_[s.i].grad;
      for (std::size_t k = 0; k < g.size(); ++k)
        gs.v[k] -= g.v[k] * sigmoid1(sv.v[k]);
    });
  }

  // Seeds the scalar and replays adjoints; leaf grads accumulate additively.
  void backward(Ref seed) {
    const Matrix& sv = nodes_[seed.i].value;
    if (sv.size() != 1)
      throw ContractError("backward: seed must be scalar, got " +
                          sv.shape_str());
    for (auto& n : nodes_) n.grad.v.assign(n.grad.v.size(), 0.0);
    nodes_[seed.i].grad.v[0] = 1.0;
    for (std::size_t i = seed.i + 1; i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i]);
    }
  }

  static double sigmoid1(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  }
  static double clamp_prob(double p) {
    return std::min(std::max(p, 1e-7), 1.0 - 1e-7);
  }

 private:
  static void check_pairwise(const Matrix& a, const Matrix& b,
                             const char* op) {
    if (!a.same_shape(b))
      throw DimensionError(std::string(op) + ": " + a.shape_str() + " vs " +
                           b.shape_str());
  }

  template <typename F>
  Ref push(Matrix out, F back) {
    Node n;
    n.grad = Matrix(out.rows, out.cols);
    n.value = std::move(out);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Ref{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace disret
