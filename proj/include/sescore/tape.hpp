#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sescore/common.hpp"
#include "sescore/tensor.hpp"

namespace sescore {

/// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.values.begin(), grad.values.end(), 0.0); }
};

enum class Act { sigmoid, tanh, relu, linear };

// Reverse-mode gradient tape. Every op records a node whose backward closure
// adds into its parents' grads; creation order is a valid topological order,
// so backward() is a single reverse sweep. A tape records one forward pass;
// re-recording means building a new tape. Parameter gradients accumulate
// (+=) across tapes until explicitly zeroed.
class Tape {
 public:
  struct Val {
    int id = -1;
  };

  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_; }

  Val input(Tensor t) { return Val{push(std::move(t), {})}; }

  Val input(const std::vector<double>& v) {
    return input(Tensor::from({v.size()}, v));
  }

  Val param(Parameter& p) {
    const int id = push(p.value, {});
    if (grad_) param_leaves_.emplace_back(id, &p);
    return Val{id};
  }

  const Tensor& value(Val v) const { return nodes_[check(v)].value; }

  double scalar(Val v) const {
    const Tensor& t = value(v);
    if (t.numel() != 1) {
      throw ContractError("expected scalar, got shape " + t.shape_str());
    }
    return t.values[0];
  }

  const Tensor& grad(Val v) const { return nodes_[check(v)].grad; }

  // ---- ops ----------------------------------------------------------

  Val matmul(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
      throw ShapeError("matmul shape mismatch: " + A.shape_str() + " vs " +
                       B.shape_str());
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.values[i * k + p];
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) {
          out.values[i * n + j] += aip * B.values[p * n + j];
        }
      }
    }
    const int ia = a.id, ib = b.id;
    return make(std::move(out), [this, ia, ib, m, k, n](const Tensor& g) {
      const Tensor& A = nodes_[ia].value;
      const Tensor& B = nodes_[ib].value;
      Tensor& ga = nodes_[ia].grad;
      Tensor& gb = nodes_[ib].grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g.values[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            ga.values[i * k + p] += gij * B.values[p * n + j];
            gb.values[p * n + j] += gij * A.values[i * k + p];
          }
        }
      }
    });
  }

  // y = x.W + b with x:{k}, W:{k,n}, b:{n}; the model's workhorse.
  Val affine(Val x, Val w, Val b) { return affine_impl(x, w, &b); }
  Val linear(Val x, Val w) { return affine_impl(x, w, nullptr); }

  Val add(Val a, Val b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x + y; },
        [this](int ia, int ib, const Tensor& g) {
          axpy(1.0, g, nodes_[ia].grad);
          axpy(1.0, g, nodes_[ib].grad);
        });
  }

  Val sub(Val a, Val b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x - y; },
        [this](int ia, int ib, const Tensor& g) {
          axpy(1.0, g, nodes_[ia].grad);
          axpy(-1.0, g, nodes_[ib].grad);
        });
  }

  Val mul(Val a, Val b) {
    return binary_elementwise(
        a, b, [](double x, double y) { return x * y; },
        [this](int ia, int ib, const Tensor& g) {
          const Tensor& A = nodes_[ia].value;
          const Tensor& B = nodes_[ib].value;
          for (std::size_t i = 0; i < g.numel(); ++i) {
            nodes_[ia].grad.values[i] += g.values[i] * B.values[i];
            nodes_[ib].grad.values[i] += g.values[i] * A.values[i];
          }
        });
  }

  Val scale(Val a, double c) {
    Tensor out = value(a);
    for (double& v : out.values) v *= c;
    const int ia = a.id;
    return make(std::move(out), [this, ia, c](const Tensor& g) {
      axpy(c, g, nodes_[ia].grad);
    });
  }

  Val one_minus(Val a) {
    Tensor out = value(a);
    for (double& v : out.values) v = 1.0 - v;
    const int ia = a.id;
    return make(std::move(out), [this, ia](const Tensor& g) {
      axpy(-1.0, g, nodes_[ia].grad);
    });
  }

  Val activate(Val x, Act kind) {
    const Tensor& in = value(x);
    Tensor out = in;
    switch (kind) {
      case Act::sigmoid:
        for (double& v : out.values) v = 1.0 / (1.0 + std::exp(-v));
        break;
      case Act::tanh:
        for (double& v : out.values) v = std::tanh(v);
        break;
      case Act::relu:
        for (double& v : out.values) v = v > 0.0 ? v : 0.0;
        break;
      case Act::linear:
        break;
    }
    const int ix = x.id;
    const int iy_pending = next_id();
    return make(std::move(out), [this, ix, iy_pending, kind](const Tensor& g) {
      const Tensor& xin = nodes_[ix].value;
      const Tensor& y = nodes_[iy_pending].value;
      Tensor& gx = nodes_[ix].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double d = 1.0;
        switch (kind) {
          case Act::sigmoid:
            d = y.values[i] * (1.0 - y.values[i]);
            break;
          case Act::tanh:
            d = 1.0 - y.values[i] * y.values[i];
            break;
          case Act::relu:
            d = xin.values[i] > 0.0 ? 1.0 : 0.0;
            break;
          case Act::linear:
            d = 1.0;
            break;
        }
        gx.values[i] += g.values[i] * d;
      }
    });
  }

  // Pass-through gradient strictly inside (lo, hi), zero where clipped.
  Val clip(Val x, double lo, double hi) {
    const Tensor& in = value(x);
    Tensor out = in;
    for (double& v : out.values) v = v < lo ? lo : (v > hi ? hi : v);
    const int ix = x.id;
    return make(std::move(out), [this, ix, lo, hi](const Tensor& g) {
      const Tensor& xin = nodes_[ix].value;
      Tensor& gx = nodes_[ix].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (xin.values[i] > lo && xin.values[i] < hi) {
          gx.values[i] += g.values[i];
        }
      }
    });
  }

  Val log(Val x) {
    Tensor out = value(x);
    for (double& v : out.values) v = std::log(v);
    const int ix = x.id;
    return make(std::move(out), [this, ix](const Tensor& g) {
      const Tensor& xin = nodes_[ix].value;
      Tensor& gx = nodes_[ix].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        gx.values[i] += g.values[i] / xin.values[i];
      }
    });
  }

  Val concat(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 1 || B.rank() != 1) {
      throw ShapeError("concat expects rank-1 tensors, got " + A.shape_str() +
                       " and " + B.shape_str());
    }
    Tensor out({A.numel() + B.numel()});
    std::copy(A.values.begin(), A.values.end(), out.values.begin());
    std::copy(B.values.begin(), B.values.end(),
              out.values.begin() + static_cast<long>(A.numel()));
    const int ia = a.id, ib = b.id;
    const std::size_t na = A.numel();
    return make(std::move(out), [this, ia, ib, na](const Tensor& g) {
      Tensor& ga = nodes_[ia].grad;
      Tensor& gb = nodes_[ib].grad;
      for (std::size_t i = 0; i < na; ++i) ga.values[i] += g.values[i];
      for (std::size_t i = 0; i < gb.numel(); ++i) {
        gb.values[i] += g.values[na + i];
      }
    });
  }

  Val dot(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.numel() != B.numel()) {
      throw ShapeError("dot length mismatch: " + A.shape_str() + " vs " +
                       B.shape_str());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) {
      s += A.values[i] * B.values[i];
    }
    const int ia = a.id, ib = b.id;
    return make(Tensor::from({1}, {s}), [this, ia, ib](const Tensor& g) {
      const double g0 = g.values[0];
      const Tensor& A = nodes_[ia].value;
      const Tensor& B = nodes_[ib].value;
      for (std::size_t i = 0; i < A.numel(); ++i) {
        nodes_[ia].grad.values[i] += g0 * B.values[i];
        nodes_[ib].grad.values[i] += g0 * A.values[i];
      }
    });
  }

  Val sum(Val a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.values) s += v;
    const int ia = a.id;
    return make(Tensor::from({1}, {s}), [this, ia](const Tensor& g) {
      Tensor& ga = nodes_[ia].grad;
      for (double& v : ga.values) v += g.values[0];
    });
  }

  Val stack_scalars(const std::vector<Val>& xs) {
    Tensor out({xs.size()});
    std::vector<int> ids(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out.values[i] = scalar(xs[i]);
      ids[i] = xs[i].id;
    }
    return make(std::move(out), [this, ids](const Tensor& g) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        nodes_[ids[i]].grad.values[0] += g.values[i];
      }
    });
  }

  // Softmax over positions with mask==1, stabilized by max-subtraction over
  // the valid positions only; masked-out outputs (and their score gradients)
  // are exactly zero.
  Val masked_softmax(Val scores, std::vector<double> mask) {
    const Tensor& s = value(scores);
    if (s.rank() != 1 || s.numel() != mask.size()) {
      throw ShapeError("masked_softmax: scores " + s.shape_str() + " vs mask [" +
                       std::to_string(mask.size()) + "]");
    }
    double mx = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0.0) continue;
      if (!any || s.values[i] > mx) mx = s.values[i];
      any = true;
    }
    if (!any) {
      throw DegenerateInputError("masked_softmax: all-zero mask");
    }
    Tensor out({s.numel()});
    double z = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == 0.0) continue;
      out.values[i] = std::exp(s.values[i] - mx);
      z += out.values[i];
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
      out.values[i] = mask[i] == 0.0 ? 0.0 : out.values[i] / z;
    }
    const int is = scores.id;
    const int iy = next_id();
    return make(std::move(out),
                [this, is, iy, mask = std::move(mask)](const Tensor& g) {
                  const Tensor& y = nodes_[iy].value;
                  Tensor& gs = nodes_[is].grad;
                  double gy = 0.0;
                  for (std::size_t i = 0; i < mask.size(); ++i) {
                    if (mask[i] != 0.0) gy += g.values[i] * y.values[i];
                  }
                  for (std::size_t i = 0; i < mask.size(); ++i) {
                    if (mask[i] != 0.0) {
                      gs.values[i] += y.values[i] * (g.values[i] - gy);
                    }
                  }
                });
  }

  // out = sum_t weights[t] * rows[t]; rows are rank-1 of equal length.
  Val lincomb(Val weights, const std::vector<Val>& rows) {
    const Tensor& w = value(weights);
    if (w.numel() != rows.size()) {
      throw ShapeError("lincomb: " + std::to_string(rows.size()) +
                       " rows vs weights " + w.shape_str());
    }
    if (rows.empty()) throw DegenerateInputError("lincomb: no rows");
    const std::size_t n = value(rows[0]).numel();
    Tensor out({n});
    std::vector<int> ids(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const Tensor& r = value(rows[t]);
      ids[t] = rows[t].id;
      const double wt = w.values[t];
      for (std::size_t i = 0; i < n; ++i) out.values[i] += wt * r.values[i];
    }
    const int iw = weights.id;
    return make(std::move(out), [this, iw, ids, n](const Tensor& g) {
      const Tensor& w = nodes_[iw].value;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        const Tensor& r = nodes_[ids[t]].value;
        Tensor& gr = nodes_[ids[t]].grad;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += g.values[i] * r.values[i];
          gr.values[i] += w.values[t] * g.values[i];
        }
        nodes_[iw].grad.values[t] += acc;
      }
    });
  }

  // ---- backward -----------------------------------------------------

  void backward(Val loss) {
    if (!grad_) {
      throw ContractError("backward on a gradient-disabled tape");
    }
    if (backward_done_) {
      throw ContractError("backward called twice on the same tape");
    }
    Node& top = nodes_[check(loss)];
    if (top.value.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got " +
                          top.value.shape_str());
    }
    backward_done_ = true;
    top.grad.values[0] = seed_grad_;
    for (int id = loss.id; id >= 0; --id) {
      if (nodes_[id].back) nodes_[id].back(nodes_[id].grad);
    }
    for (auto& [id, p] : param_leaves_) {
      const Tensor& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        p->grad.values[i] += g.values[i];
      }
    }
  }

  // Scales the next backward pass; used for mean-over-batch losses.
  void set_seed_grad(double s) { seed_grad_ = s; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(const Tensor&)> back;
  };

  // Deque keeps value()/grad() references stable while later ops append.
  std::deque<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> param_leaves_;
  bool grad_ = true;
  bool backward_done_ = false;
  double seed_grad_ = 1.0;

  int next_id() const { return static_cast<int>(nodes_.size()); }

  int check(Val v) const {
    if (v.id < 0 || v.id >= next_id()) {
      throw ContractError("value does not belong to this tape");
    }
    return v.id;
  }

  int push(Tensor value, std::function<void(const Tensor&)> back) {
    Node n;
    if (grad_) n.grad = Tensor(value.shape);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return next_id() - 1;
  }

  Val make(Tensor value, std::function<void(const Tensor&)> back) {
    return Val{push(std::move(value), grad_ ? std::move(back) : nullptr)};
  }

  static void axpy(double c, const Tensor& x, Tensor& y) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
      y.values[i] += c * x.values[i];
    }
  }

  template <class FwdFn, class BackFn>
  Val binary_elementwise(Val a, Val b, FwdFn f, BackFn back) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
      throw ShapeError("elementwise shape mismatch: " + A.shape_str() +
                       " vs " + B.shape_str());
    }
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) {
      out.values[i] = f(A.values[i], B.values[i]);
    }
    const int ia = a.id, ib = b.id;
    return make(std::move(out), [back, ia, ib](const Tensor& g) {
      back(ia, ib, g);
    });
  }

  Val affine_impl(Val x, Val w, const Val* b) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    if (X.rank() != 1 || W.rank() != 2 || X.numel() != W.rows()) {
      throw ShapeError("affine shape mismatch: x " + X.shape_str() + " vs W " +
                       W.shape_str());
    }
    const std::size_t k = W.rows(), n = W.cols();
    Tensor out({n});
    if (b) {
      const Tensor& B = value(*b);
      if (B.numel() != n) {
        throw ShapeError("affine bias mismatch: " + B.shape_str() + " vs W " +
                         W.shape_str());
      }
      out.values = B.values;
    }
    for (std::size_t i = 0; i < k; ++i) {
      const double xi = X.values[i];
      if (xi == 0.0) continue;
      const double* wrow = &W.values[i * n];
      for (std::size_t j = 0; j < n; ++j) out.values[j] += xi * wrow[j];
    }
    const int ix = x.id, iw = w.id, ib = b ? b->id : -1;
    return make(std::move(out), [this, ix, iw, ib, k, n](const Tensor& g) {
      const Tensor& X = nodes_[ix].value;
      const Tensor& W = nodes_[iw].value;
      Tensor& gx = nodes_[ix].grad;
      Tensor& gw = nodes_[iw].grad;
      for (std::size_t i = 0; i < k; ++i) {
        const double* wrow = &W.values[i * n];
        double* gwrow = &gw.values[i * n];
        const double xi = X.values[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          acc += g.values[j] * wrow[j];
          gwrow[j] += xi * g.values[j];
        }
        gx.values[i] += acc;
      }
      if (ib >= 0) {
        Tensor& gb = nodes_[ib].grad;
        for (std::size_t j = 0; j < n; ++j) gb.values[j] += g.values[j];
      }
    });
  }
};

using Val = Tape::Val;

// Central-difference oracle: perturbs every coordinate of every parameter,
// evaluates f twice, and compares against the analytic gradients already
// accumulated in Parameter::grad. Returns the max relative error with the
// denominator max(1e-8, |analytic| + |numeric|).
inline double finite_diff_check(const std::function<double()>& f,
                                const std::vector<Parameter*>& params,
                                double eps = 1e-5) {
  double worst = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value.values[i];
      p->value.values[i] = saved + eps;
      const double fp = f();
      p->value.values[i] = saved - eps;
      const double fm = f();
      p->value.values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p->grad.values[i];
      const double denom =
          std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace sescore
