#pragma once

// Small reverse-mode tape over dense row-major Eigen matrices. A Graph is
// built per training sample, backward() runs the tape in reverse, and the
// graph is thrown away. Templated on the scalar so tests can run the exact
// same code in double for finite-difference checks while training runs in
// float.

#include <glosmo/common.hpp>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace glosmo::ag {

template <typename S>
class Graph {
 public:
  using M = Mat<S>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var input(M value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(M value) { return input(std::move(value), false); }

  Var constant_scalar(S v) {
    M m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  const M& value(Var v) const { return nodes_.at(v.id).value; }

  const M& grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      static thread_local M zero;
      zero = M::Zero(n.value.rows(), n.value.cols());
      return zero;
    }
    return n.grad;
  }

  // ---- elementwise and broadcast ----

  Var add(Var a, Var b) {
    check_same_shape("add", a, b);
    return make(value(a) + value(b), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad);
      accum(b, n.grad);
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape("sub", a, b);
    return make(value(a) - value(b), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad);
      accum(b, -n.grad);
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    return make(value(a).cwiseProduct(value(b)), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad.cwiseProduct(value(b)));
      accum(b, n.grad.cwiseProduct(value(a)));
    });
  }

  Var scale(Var a, S s) {
    return make(value(a) * s, {a}, [this, a, s](Node& n) { accum(a, n.grad * s); });
  }

  Var add_scalar(Var a, S s) {
    return make((value(a).array() + s).matrix(), {a}, [this, a](Node& n) { accum(a, n.grad); });
  }

  // a [n x m] + row broadcast [1 x m]
  Var add_rowvec(Var a, Var r) {
    check_rowvec("add_rowvec", a, r);
    return make(value(a).rowwise() + value(r).row(0), {a, r}, [this, a, r](Node& n) {
      accum(a, n.grad);
      accum(r, n.grad.colwise().sum());
    });
  }

  Var mul_rowvec(Var a, Var r) {
    check_rowvec("mul_rowvec", a, r);
    return make((value(a).array().rowwise() * value(r).row(0).array()).matrix(), {a, r},
                [this, a, r](Node& n) {
                  accum(a, (n.grad.array().rowwise() * value(r).row(0).array()).matrix());
                  accum(r, n.grad.cwiseProduct(value(a)).colwise().sum());
                });
  }

  Var relu(Var a) {
    return make(value(a).cwiseMax(S(0)), {a}, [this, a](Node& n) {
      M mask = (value(a).array() > S(0)).template cast<S>().matrix();
      accum(a, n.grad.cwiseProduct(mask));
    });
  }

  Var log(Var a) {
    return make(value(a).array().log().matrix(), {a}, [this, a](Node& n) {
      accum(a, n.grad.cwiseQuotient(value(a)));
    });
  }

  // ---- matrix products ----

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) shape_error("matmul", a, b);
    return make(value(a) * value(b), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad * value(b).transpose());
      accum(b, value(a).transpose() * n.grad);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) shape_error("matmul_nt", a, b);
    return make(value(a) * value(b).transpose(), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad * value(b));
      accum(b, n.grad.transpose() * value(a));
    });
  }

  // ---- row-wise normalizations ----

  Var layernorm(Var a, S eps) {
    const M& x = value(a);
    M y(x.rows(), x.cols());
    M inv_sigma(x.rows(), 1);
    const auto cols = static_cast<S>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mu = x.row(i).mean();
      S var = (x.row(i).array() - mu).square().sum() / cols;
      S inv = S(1) / std::sqrt(var + eps);
      inv_sigma(i, 0) = inv;
      y.row(i) = (x.row(i).array() - mu).matrix() * inv;
    }
    return make(std::move(y), {a}, [this, a, inv_sigma](Node& n) {
      const M& yv = n.value;
      const M& dy = n.grad;
      M dx(yv.rows(), yv.cols());
      const auto cols = static_cast<S>(yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        S mean_dy = dy.row(i).mean();
        S mean_dyy = dy.row(i).cwiseProduct(yv.row(i)).sum() / cols;
        dx.row(i) =
            ((dy.row(i).array() - mean_dy) - yv.row(i).array() * mean_dyy).matrix() *
            inv_sigma(i, 0);
      }
      accum(a, dx);
    });
  }

  Var softmax(Var a) {
    const M& x = value(a);
    M y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mx = x.row(i).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - mx).exp();
      y.row(i) = (e / e.sum()).matrix();
    }
    return make(std::move(y), {a}, [this, a](Node& n) {
      const M& yv = n.value;
      const M& dy = n.grad;
      M dx(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        S dot = dy.row(i).cwiseProduct(yv.row(i)).sum();
        dx.row(i) = yv.row(i).cwiseProduct(dy.row(i).array().matrix() - M::Constant(1, yv.cols(), dot));
      }
      accum(a, dx);
    });
  }

  Var log_softmax(Var a) {
    const M& x = value(a);
    M y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mx = x.row(i).maxCoeff();
      S lse = std::log((x.row(i).array() - mx).exp().sum()) + mx;
      y.row(i) = x.row(i).array() - lse;
    }
    return make(std::move(y), {a}, [this, a](Node& n) {
      const M& yv = n.value;
      const M& dy = n.grad;
      M dx(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        S total = dy.row(i).sum();
        dx.row(i) = dy.row(i) - yv.row(i).array().exp().matrix() * total;
      }
      accum(a, dx);
    });
  }

  // ---- reductions ----

  Var sum(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).sum();
    return make(std::move(out), {a}, [this, a](Node& n) {
      accum(a, M::Constant(value(a).rows(), value(a).cols(), n.grad(0, 0)));
    });
  }

  Var mean_all(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).mean();
    return make(std::move(out), {a}, [this, a](Node& n) {
      S g = n.grad(0, 0) / static_cast<S>(value(a).size());
      accum(a, M::Constant(value(a).rows(), value(a).cols(), g));
    });
  }

  // sum(w .* a) with constant weights
  Var sum_weighted(Var a, M w) {
    if (w.rows() != value(a).rows() || w.cols() != value(a).cols())
      throw std::invalid_argument("sum_weighted: weight shape mismatch");
    M out(1, 1);
    out(0, 0) = value(a).cwiseProduct(w).sum();
    auto wp = std::make_shared<M>(std::move(w));
    return make(std::move(out), {a},
                [this, a, wp](Node& n) { accum(a, *wp * n.grad(0, 0)); });
  }

  Var mean_rows(Var a) {
    M out = value(a).colwise().mean();
    return make(std::move(out), {a}, [this, a](Node& n) {
      S inv = S(1) / static_cast<S>(value(a).rows());
      accum(a, (M::Ones(value(a).rows(), 1) * n.grad) * inv);
    });
  }

  // ---- indexing and stacking ----

  Var gather_rows(Var table, std::vector<int> idx) {
    const M& t = value(table);
    for (int i : idx)
      if (i < 0 || i >= t.rows()) throw std::invalid_argument("gather_rows: index out of range");
    M out(static_cast<Eigen::Index>(idx.size()), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(idx[i]);
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    return make(std::move(out), {table}, [this, table, ip](Node& n) {
      M d = M::Zero(value(table).rows(), value(table).cols());
      for (std::size_t i = 0; i < ip->size(); ++i)
        d.row((*ip)[i]) += n.grad.row(static_cast<Eigen::Index>(i));
      accum(table, d);
    });
  }

  // out[i, 0] = a(i, cols[i])
  Var pick(Var a, std::vector<int> cols) {
    const M& x = value(a);
    if (static_cast<Eigen::Index>(cols.size()) != x.rows())
      throw std::invalid_argument("pick: one column index per row required");
    M out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int c = cols[static_cast<std::size_t>(i)];
      if (c < 0 || c >= x.cols()) throw std::invalid_argument("pick: column out of range");
      out(i, 0) = x(i, c);
    }
    auto cp = std::make_shared<std::vector<int>>(std::move(cols));
    return make(std::move(out), {a}, [this, a, cp](Node& n) {
      M d = M::Zero(value(a).rows(), value(a).cols());
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        d(i, (*cp)[static_cast<std::size_t>(i)]) += n.grad(i, 0);
      accum(a, d);
    });
  }

  Var concat_rows(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) shape_error("concat_rows", a, b);
    M out(value(a).rows() + value(b).rows(), value(a).cols());
    out.topRows(value(a).rows()) = value(a);
    out.bottomRows(value(b).rows()) = value(b);
    return make(std::move(out), {a, b}, [this, a, b](Node& n) {
      accum(a, n.grad.topRows(value(a).rows()));
      accum(b, n.grad.bottomRows(value(b).rows()));
    });
  }

  Var concat_cols(const std::vector<Var>& vs) {
    if (vs.empty()) throw std::invalid_argument("concat_cols: empty list");
    Eigen::Index rows = value(vs[0]).rows(), cols = 0;
    for (Var v : vs) {
      if (value(v).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
      cols += value(v).cols();
    }
    M out(rows, cols);
    Eigen::Index at = 0;
    for (Var v : vs) {
      out.middleCols(at, value(v).cols()) = value(v);
      at += value(v).cols();
    }
    auto vp = std::make_shared<std::vector<Var>>(vs);
    return make(std::move(out), vs, [this, vp](Node& n) {
      Eigen::Index at = 0;
      for (Var v : *vp) {
        accum(v, n.grad.middleCols(at, value(v).cols()));
        at += value(v).cols();
      }
    });
  }

  Var slice_rows(Var a, int r0, int rows) {
    if (r0 < 0 || rows < 0 || r0 + rows > value(a).rows())
      throw std::invalid_argument("slice_rows: range out of bounds");
    return make(value(a).middleRows(r0, rows), {a}, [this, a, r0, rows](Node& n) {
      M d = M::Zero(value(a).rows(), value(a).cols());
      d.middleRows(r0, rows) = n.grad;
      accum(a, d);
    });
  }

  Var slice_cols(Var a, int c0, int cols) {
    if (c0 < 0 || cols < 0 || c0 + cols > value(a).cols())
      throw std::invalid_argument("slice_cols: range out of bounds");
    return make(value(a).middleCols(c0, cols), {a}, [this, a, c0, cols](Node& n) {
      M d = M::Zero(value(a).rows(), value(a).cols());
      d.middleCols(c0, cols) = n.grad;
      accum(a, d);
    });
  }

  // rows repeated: out [n*factor x m], out.row(i) = a.row(i / factor)
  Var upsample_rows(Var a, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample_rows: factor must be >= 1");
    const M& x = value(a);
    M out(x.rows() * factor, x.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = x.row(i / factor);
    return make(std::move(out), {a}, [this, a, factor](Node& n) {
      M d = M::Zero(value(a).rows(), value(a).cols());
      for (Eigen::Index i = 0; i < n.grad.rows(); ++i) d.row(i / factor) += n.grad.row(i);
      accum(a, d);
    });
  }

  // non-overlapping window mean over rows; trailing rows that do not fill a
  // window are dropped
  Var avgpool_rows(Var a, int window) {
    if (window < 1) throw std::invalid_argument("avgpool_rows: window must be >= 1");
    const M& x = value(a);
    Eigen::Index n_out = x.rows() / window;
    M out = M::Zero(n_out, x.cols());
    for (Eigen::Index i = 0; i < n_out; ++i)
      out.row(i) = x.middleRows(i * window, window).colwise().mean();
    return make(std::move(out), {a}, [this, a, window](Node& n) {
      M d = M::Zero(value(a).rows(), value(a).cols());
      S inv = S(1) / static_cast<S>(window);
      for (Eigen::Index i = 0; i < n.grad.rows(); ++i)
        for (int w = 0; w < window; ++w) d.row(i * window + w) = n.grad.row(i) * inv;
      accum(a, d);
    });
  }

  Var repeat_row(Var a, int n_rows) {
    if (value(a).rows() != 1) throw std::invalid_argument("repeat_row: input must be a row vector");
    M out = M::Ones(n_rows, 1) * value(a);
    return make(std::move(out), {a},
                [this, a](Node& n) { accum(a, n.grad.colwise().sum()); });
  }

  // out.row(i) = p.row(i) * (*mats[which[i]]). Each mat is [cols(p) x m].
  // Used to push predicted class probabilities through per-row constant
  // mixing matrices in one node.
  Var row_mix(Var p, std::shared_ptr<std::vector<M>> mats, std::vector<int> which) {
    const M& x = value(p);
    if (static_cast<Eigen::Index>(which.size()) != x.rows())
      throw std::invalid_argument("row_mix: one matrix index per row required");
    for (int w : which)
      if (w < 0 || w >= static_cast<int>(mats->size()))
        throw std::invalid_argument("row_mix: matrix index out of range");
    for (const M& m : *mats)
      if (m.rows() != x.cols()) throw std::invalid_argument("row_mix: matrix row mismatch");
    Eigen::Index out_cols = (*mats)[0].cols();
    M out(x.rows(), out_cols);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      out.row(i) = x.row(i) * (*mats)[which[static_cast<std::size_t>(i)]];
    auto wp = std::make_shared<std::vector<int>>(std::move(which));
    return make(std::move(out), {p}, [this, p, mats, wp](Node& n) {
      M d(value(p).rows(), value(p).cols());
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        d.row(i) = n.grad.row(i) * (*mats)[(*wp)[static_cast<std::size_t>(i)]].transpose();
      accum(p, d);
    });
  }

  // conv over rows (time) with zero padding. x [L x Cin], w [k*Cin x Cout],
  // b [1 x Cout]; output [n x Cout] with n = floor((L + 2*pad - k)/stride)+1.
  // Lowered to an im2col matrix so forward and backward are single GEMMs.
  Var conv1d(Var x, Var w, Var b, int kernel, int stride, int pad) {
    const M& xv = value(x);
    const M& wv = value(w);
    const M& bv = value(b);
    if (kernel < 1 || stride < 1 || pad < 0) throw std::invalid_argument("conv1d: bad geometry");
    Eigen::Index cin = xv.cols();
    if (wv.rows() != static_cast<Eigen::Index>(kernel) * cin)
      throw std::invalid_argument("conv1d: weight rows must equal kernel*Cin");
    if (bv.rows() != 1 || bv.cols() != wv.cols())
      throw std::invalid_argument("conv1d: bias shape mismatch");
    Eigen::Index padded = xv.rows() + 2 * pad;
    if (padded < kernel) throw std::invalid_argument("conv1d: input shorter than kernel");
    Eigen::Index n_out = (padded - kernel) / stride + 1;

    M cols = M::Zero(n_out, static_cast<Eigen::Index>(kernel) * cin);
    for (Eigen::Index i = 0; i < n_out; ++i) {
      for (int o = 0; o < kernel; ++o) {
        Eigen::Index src = i * stride + o - pad;
        if (src >= 0 && src < xv.rows()) cols.block(i, o * cin, 1, cin) = xv.row(src);
      }
    }
    M out = cols * wv;
    out.rowwise() += bv.row(0);
    auto cols_p = std::make_shared<M>(std::move(cols));
    return make(std::move(out), {x, w, b},
                [this, x, w, b, cols_p, kernel, stride, pad](Node& n) {
                  const M& wv2 = value(w);
                  Eigen::Index cin = value(x).cols();
                  accum(w, cols_p->transpose() * n.grad);
                  accum(b, n.grad.colwise().sum());
                  M dcols = n.grad * wv2.transpose();
                  M dx = M::Zero(value(x).rows(), cin);
                  for (Eigen::Index i = 0; i < dcols.rows(); ++i) {
                    for (int o = 0; o < kernel; ++o) {
                      Eigen::Index src = i * stride + o - pad;
                      if (src >= 0 && src < dx.rows())
                        dx.row(src) += dcols.block(i, o * cin, 1, cin);
                    }
                  }
                  accum(x, dx);
                });
  }

  void backward(Var loss) {
    Node& ln = nodes_.at(loss.id);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be a scalar");
    ln.grad = M::Constant(1, 1, S(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
      n.back(n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M value;
    M grad;
    bool needs_grad = false;
    std::function<void(Node&)> back;
  };

  Var make(M value, const std::vector<Var>& parents, std::function<void(Node&)> back) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) n.needs_grad = n.needs_grad || nodes_.at(p.id).needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accum(Var v, const M& g) {
    Node& n = nodes_.at(v.id);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  void check_same_shape(const char* op, Var a, Var b) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      shape_error(op, a, b);
  }

  void check_rowvec(const char* op, Var a, Var r) const {
    if (value(r).rows() != 1 || value(r).cols() != value(a).cols()) shape_error(op, a, r);
  }

  [[noreturn]] void shape_error(const char* op, Var a, Var b) const {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(value(a).rows()) + "x" +
                                std::to_string(value(a).cols()) + " vs " +
                                std::to_string(value(b).rows()) + "x" +
                                std::to_string(value(b).cols()));
  }

  std::vector<Node> nodes_;
};

}  // namespace glosmo::ag
