#include "anisdf/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "anisdf/rng.hpp"

namespace anisdf::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw AutodiffError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Tape& tape_of(const Var& a, const char* op) {
  if (!a.valid()) throw AutodiffError(std::string(op) + ": unbound Var");
  return *a.tape();
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_stable(double x, double beta) {
  const double t = beta * x;
  if (t > 30.0) return x + std::log1p(std::exp(-t)) / beta;
  return std::log1p(std::exp(t)) / beta;
}

}  // namespace

const Mat& Var::value() const {
  if (!tape_) throw AutodiffError("value(): unbound Var");
  return tape_->value_of(idx_);
}

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw AutodiffError("scalar(): node is not 1x1");
  return v(0, 0);
}

Var Tape::make_leaf(Mat value, bool needs_grad, const char* op) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.needs_grad = grad_enabled_ && needs_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make_node(Mat value, std::vector<int> parents, const char* op, BackwardFn bw) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    for (int p : parents)
      if (nodes_[p].needs_grad) {
        n.needs_grad = true;
        break;
      }
    if (n.needs_grad) n.backward = std::move(bw);
  }
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const std::string& id) {
  if (!store_) throw AutodiffError("param(): tape has no bound ParameterStore");
  auto it = param_nodes_.find(id);
  if (it != param_nodes_.end()) return Var(this, it->second);
  const Parameter& p = store_->at(id);  // throws on missing id
  Var v = make_leaf(p.matrix(), true, "param");
  param_nodes_.emplace(id, v.index());
  return v;
}

void Tape::accumulate(int idx, const Mat& g) {
  Node& n = nodes_[idx];
  if (!n.needs_grad) return;
  if (!n.grad_live) {
    n.grad = g;
    n.grad_live = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var output) {
  if (!grad_enabled_) throw AutodiffError("backward(): tape recorded without gradients");
  if (output.tape() != this) throw AutodiffError("backward(): output from another tape");
  const Mat& out = value_of(output.index());
  if (out.size() != 1) throw AutodiffError("backward(): output must be a 1x1 scalar");
  for (auto& n : nodes_) {
    n.grad_live = false;
    n.grad.resize(0, 0);
  }
  accumulate(output.index(), Mat::Ones(1, 1));
  for (int i = output.index(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.grad_live || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  ran_backward_ = true;
}

Mat Tape::grad(Var v) const {
  if (!ran_backward_) throw AutodiffError("grad(): no backward pass has run");
  const Node& n = nodes_[v.index()];
  if (n.grad_live) return n.grad;
  return Mat::Zero(n.value.rows(), n.value.cols());
}

Mat Tape::param_grad(const std::string& id) const {
  auto it = param_nodes_.find(id);
  if (it == param_nodes_.end()) {
    const Parameter& p = store_->at(id);
    return Mat::Zero(p.rows(), p.cols());
  }
  return grad(Var(const_cast<Tape*>(this), it->second));
}

// ---- op builders ------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, "matmul");
  if (a.cols() != b.rows()) throw AutodiffError("matmul: inner dimensions differ");
  Mat out;
  out.noalias() = a.value() * b.value();
  const int ia = a.index(), ib = b.index();
  return t.make_node(std::move(out), {ia, ib}, "matmul", [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g * tp.value_of(ib).transpose());
    tp.accumulate(ib, tp.value_of(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, "add");
  check_same_shape(a, b, "add");
  const int ia = a.index(), ib = b.index();
  return t.make_node(a.value() + b.value(), {ia, ib}, "add", [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, "sub");
  check_same_shape(a, b, "sub");
  const int ia = a.index(), ib = b.index();
  return t.make_node(a.value() - b.value(), {ia, ib}, "sub", [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var neg(Var a) {
  Tape& t = tape_of(a, "neg");
  const int ia = a.index();
  return t.make_node(-a.value(), {ia}, "neg", [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, -g); });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, "mul");
  check_same_shape(a, b, "mul");
  const int ia = a.index(), ib = b.index();
  return t.make_node(a.value().cwiseProduct(b.value()), {ia, ib}, "mul", [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value_of(ib)));
    tp.accumulate(ib, g.cwiseProduct(tp.value_of(ia)));
  });
}

Var add_rowvec(Var a, Var row) {
  Tape& t = tape_of(a, "add_rowvec");
  if (row.rows() != 1 || row.cols() != a.cols()) throw AutodiffError("add_rowvec: row must be [1,cols(a)]");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.index(), ib = row.index();
  return t.make_node(std::move(out), {ia, ib}, "add_rowvec", [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g.colwise().sum());
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a, "scale");
  const int ia = a.index();
  return t.make_node(a.value() * c, {ia}, "scale", [ia, c](Tape& tp, const Mat& g) { tp.accumulate(ia, g * c); });
}

Var add_const(Var a, double c) {
  Tape& t = tape_of(a, "add_const");
  const int ia = a.index();
  return t.make_node(a.value().array() + c, {ia}, "add_const", [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, g); });
}

Var bscale(Var a, Var s) {
  Tape& t = tape_of(a, "bscale");
  if (s.rows() != 1 || s.cols() != 1) throw AutodiffError("bscale: s must be [1,1]");
  const int ia = a.index(), is = s.index();
  return t.make_node(a.value() * s.scalar(), {ia, is}, "bscale", [ia, is](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g * tp.value_of(is)(0, 0));
    tp.accumulate(is, Mat::Constant(1, 1, (g.array() * tp.value_of(ia).array()).sum()));
  });
}

Var div_guarded(Var a, Var b, double eps) {
  Tape& t = tape_of(a, "div_guarded");
  check_same_shape(a, b, "div_guarded");
  Mat denom = b.value().array() + eps;
  const int ia = a.index(), ib = b.index();
  Mat out = a.value().cwiseQuotient(denom);
  return t.make_node(std::move(out), {ia, ib}, "div_guarded", [ia, ib, eps](Tape& tp, const Mat& g) {
    Mat denom = tp.value_of(ib).array() + eps;
    Mat ga = g.cwiseQuotient(denom);
    tp.accumulate(ia, ga);
    tp.accumulate(ib, -ga.cwiseProduct(tp.value_of(ia)).cwiseQuotient(denom));
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a, "sigmoid");
  Mat out = a.value().unaryExpr([](double x) { return sigmoid_stable(x); });
  const int ia = a.index();
  const int self = t.size();
  return t.make_node(std::move(out), {ia}, "sigmoid", [ia, self](Tape& tp, const Mat& g) {
    const Mat& y = tp.value_of(self);
    tp.accumulate(ia, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var softplus(Var a, double beta) {
  Tape& t = tape_of(a, "softplus");
  if (beta <= 0.0) throw AutodiffError("softplus: beta must be positive");
  Mat out = a.value().unaryExpr([beta](double x) { return softplus_stable(x, beta); });
  const int ia = a.index();
  return t.make_node(std::move(out), {ia}, "softplus", [ia, beta](Tape& tp, const Mat& g) {
    Mat d = tp.value_of(ia).unaryExpr([beta](double x) { return sigmoid_stable(beta * x); });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a, "relu");
  const Mat& x = a.value();
  if (x.size() > 0) t.note_kink_margin(x.array().abs().minCoeff());
  const int ia = a.index();
  return t.make_node(x.cwiseMax(0.0), {ia}, "relu", [ia](Tape& tp, const Mat& g) {
    // subgradient 0 at the kink
    Mat mask = (tp.value_of(ia).array() > 0.0).cast<double>();
    tp.accumulate(ia, g.cwiseProduct(mask));
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a, "exp");
  Mat out = a.value().array().exp();
  const int ia = a.index();
  const int self = t.size();
  return t.make_node(std::move(out), {ia}, "exp",
                     [ia, self](Tape& tp, const Mat& g) { tp.accumulate(ia, g.cwiseProduct(tp.value_of(self))); });
}

Var log_clamped(Var a, double floor) {
  Tape& t = tape_of(a, "log_clamped");
  if (floor <= 0.0) throw AutodiffError("log_clamped: floor must be positive");
  Mat out = a.value().unaryExpr([floor](double x) { return std::log(std::max(x, floor)); });
  const int ia = a.index();
  return t.make_node(std::move(out), {ia}, "log_clamped", [ia, floor](Tape& tp, const Mat& g) {
    Mat d = tp.value_of(ia).unaryExpr([floor](double x) { return x > floor ? 1.0 / x : 0.0; });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

Var square(Var a) {
  Tape& t = tape_of(a, "square");
  const int ia = a.index();
  return t.make_node(a.value().array().square(), {ia}, "square", [ia](Tape& tp, const Mat& g) {
    tp.accumulate(ia, 2.0 * g.cwiseProduct(tp.value_of(ia)));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "sum");
  const int ia = a.index();
  return t.make_node(Mat::Constant(1, 1, a.value().sum()), {ia}, "sum", [ia](Tape& tp, const Mat& g) {
    const Mat& x = tp.value_of(ia);
    tp.accumulate(ia, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a, "mean");
  const int ia = a.index();
  const double n = static_cast<double>(a.value().size());
  return t.make_node(Mat::Constant(1, 1, a.value().sum() / n), {ia}, "mean", [ia, n](Tape& tp, const Mat& g) {
    const Mat& x = tp.value_of(ia);
    tp.accumulate(ia, Mat::Constant(x.rows(), x.cols(), g(0, 0) / n));
  });
}

Var rowwise_sum(Var a) {
  Tape& t = tape_of(a, "rowwise_sum");
  const int ia = a.index();
  return t.make_node(a.value().rowwise().sum(), {ia}, "rowwise_sum", [ia](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g.replicate(1, tp.value_of(ia).cols()));
  });
}

Var rowwise_dot(Var a, Var b) {
  Tape& t = tape_of(a, "rowwise_dot");
  check_same_shape(a, b, "rowwise_dot");
  const int ia = a.index(), ib = b.index();
  Mat out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.make_node(std::move(out), {ia, ib}, "rowwise_dot", [ia, ib](Tape& tp, const Mat& g) {
    const Mat& av = tp.value_of(ia);
    const Mat& bv = tp.value_of(ib);
    Mat gb = g.replicate(1, av.cols());
    tp.accumulate(ia, gb.cwiseProduct(bv));
    tp.accumulate(ib, gb.cwiseProduct(av));
  });
}

Var rowwise_sqnorm(Var a) {
  Tape& t = tape_of(a, "rowwise_sqnorm");
  const int ia = a.index();
  return t.make_node(a.value().rowwise().squaredNorm(), {ia}, "rowwise_sqnorm", [ia](Tape& tp, const Mat& g) {
    tp.accumulate(ia, 2.0 * g.replicate(1, tp.value_of(ia).cols()).cwiseProduct(tp.value_of(ia)));
  });
}

Var rowwise_norm(Var a, double eps) {
  Tape& t = tape_of(a, "rowwise_norm");
  const int ia = a.index();
  Mat out = (a.value().rowwise().squaredNorm().array() + eps * eps).sqrt();
  const int self = t.size();
  return t.make_node(std::move(out), {ia}, "rowwise_norm", [ia, self](Tape& tp, const Mat& g) {
    const Mat& n = tp.value_of(self);
    Mat coef = g.cwiseQuotient(n.cwiseMax(1e-300));
    tp.accumulate(ia, coef.replicate(1, tp.value_of(ia).cols()).cwiseProduct(tp.value_of(ia)));
  });
}

Var rowwise_normalize(Var a, double threshold, const Eigen::RowVector3d& fallback) {
  Tape& t = tape_of(a, "rowwise_normalize");
  if (a.cols() != 3) throw AutodiffError("rowwise_normalize: expects [S,3]");
  const Mat& x = a.value();
  Mat out(x.rows(), 3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    if (n < threshold)
      out.row(r) = fallback;
    else
      out.row(r) = x.row(r) / n;
  }
  const int ia = a.index();
  const int self = t.size();
  return t.make_node(std::move(out), {ia}, "rowwise_normalize", [ia, self, threshold](Tape& tp, const Mat& g) {
    const Mat& x = tp.value_of(ia);
    const Mat& y = tp.value_of(self);
    Mat gx = Mat::Zero(x.rows(), 3);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double n = x.row(r).norm();
      if (n < threshold) continue;  // degenerate rows: zero gradient
      const double gy = g.row(r).dot(y.row(r));
      gx.row(r) = (g.row(r) - gy * y.row(r)) / n;
    }
    tp.accumulate(ia, gx);
  });
}

Var colwise_scale(Var a, Var s) {
  Tape& t = tape_of(a, "colwise_scale");
  if (s.cols() != 1 || s.rows() != a.rows()) throw AutodiffError("colwise_scale: s must be [rows(a),1]");
  Mat out = a.value().array().colwise() * s.value().col(0).array();
  const int ia = a.index(), is = s.index();
  return t.make_node(std::move(out), {ia, is}, "colwise_scale", [ia, is](Tape& tp, const Mat& g) {
    const Mat& av = tp.value_of(ia);
    const Mat& sv = tp.value_of(is);
    tp.accumulate(ia, g.array().colwise() * sv.col(0).array());
    tp.accumulate(is, g.cwiseProduct(av).rowwise().sum());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw AutodiffError("concat_cols: no parts");
  Tape& t = tape_of(parts[0], "concat_cols");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> idx;
  std::vector<int> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw AutodiffError("concat_cols: row count mismatch");
    cols += p.cols();
    idx.push_back(p.index());
    widths.push_back(static_cast<int>(p.cols()));
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.make_node(std::move(out), idx, "concat_cols", [idx, widths](Tape& tp, const Mat& g) {
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      tp.accumulate(idx[i], g.middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

Var slice_cols(Var a, int from, int count) {
  Tape& t = tape_of(a, "slice_cols");
  if (from < 0 || count < 0 || from + count > a.cols()) throw AutodiffError("slice_cols: out of range");
  const int ia = a.index();
  return t.make_node(a.value().middleCols(from, count), {ia}, "slice_cols",
                     [ia, from, count](Tape& tp, const Mat& g) {
                       const Mat& x = tp.value_of(ia);
                       Mat gx = Mat::Zero(x.rows(), x.cols());
                       gx.middleCols(from, count) = g;
                       tp.accumulate(ia, gx);
                     });
}

Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = tape_of(a, "gather_rows");
  const Mat& x = a.value();
  Mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.rows()) throw AutodiffError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
  }
  const int ia = a.index();
  return t.make_node(std::move(out), {ia}, "gather_rows", [ia, idx = std::move(idx)](Tape& tp, const Mat& g) {
    const Mat& x = tp.value_of(ia);
    Mat gx = Mat::Zero(x.rows(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) gx.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(ia, gx);
  });
}

Var weighted_gather(Var table, Eigen::MatrixXi idx, Mat w) {
  Tape& t = tape_of(table, "weighted_gather");
  if (idx.rows() != w.rows() || idx.cols() != w.cols()) throw AutodiffError("weighted_gather: idx/w shape mismatch");
  const Mat& tab = table.value();
  const Eigen::Index S = idx.rows(), J = idx.cols(), F = tab.cols();
  Mat out = Mat::Zero(S, F);
  for (Eigen::Index r = 0; r < S; ++r)
    for (Eigen::Index j = 0; j < J; ++j) out.row(r) += w(r, j) * tab.row(idx(r, j));
  const int it = table.index();
  return t.make_node(std::move(out), {it}, "weighted_gather",
                     [it, idx = std::move(idx), w = std::move(w)](Tape& tp, const Mat& g) {
                       const Mat& tab = tp.value_of(it);
                       Mat gt = Mat::Zero(tab.rows(), tab.cols());
                       for (Eigen::Index r = 0; r < idx.rows(); ++r)
                         for (Eigen::Index j = 0; j < idx.cols(); ++j) gt.row(idx(r, j)) += w(r, j) * g.row(r);
                       tp.accumulate(it, gt);
                     });
}

Var attach_input_jacobian(Var y, Var x, const std::array<Mat, 3>& dy_dx) {
  Tape& t = tape_of(y, "attach_input_jacobian");
  if (x.cols() != 3) throw AutodiffError("attach_input_jacobian: x must be [S,3]");
  for (const Mat& j : dy_dx)
    if (j.rows() != y.rows() || j.cols() != y.cols())
      throw AutodiffError("attach_input_jacobian: jacobian shape mismatch");
  const int iy = y.index(), ix = x.index();
  return t.make_node(y.value(), {iy, ix}, "attach_input_jacobian", [iy, ix, dy_dx](Tape& tp, const Mat& g) {
    tp.accumulate(iy, g);
    const Mat& xv = tp.value_of(ix);
    Mat gx = Mat::Zero(xv.rows(), 3);
    for (int k = 0; k < 3; ++k) gx.col(k) = g.cwiseProduct(dy_dx[k]).rowwise().sum();
    tp.accumulate(ix, gx);
  });
}

Var segment_sum(Var x, std::vector<int> offsets) {
  Tape& t = tape_of(x, "segment_sum");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows())
    throw AutodiffError("segment_sum: bad offsets");
  const Eigen::Index R = static_cast<Eigen::Index>(offsets.size()) - 1;
  Mat out = Mat::Zero(R, x.cols());
  for (Eigen::Index r = 0; r < R; ++r)
    for (int i = offsets[r]; i < offsets[r + 1]; ++i) out.row(r) += x.value().row(i);
  const int ix = x.index();
  return t.make_node(std::move(out), {ix}, "segment_sum", [ix, offsets = std::move(offsets)](Tape& tp, const Mat& g) {
    const Mat& xv = tp.value_of(ix);
    Mat gx(xv.rows(), xv.cols());
    for (std::size_t r = 0; r + 1 < offsets.size(); ++r)
      for (int i = offsets[r]; i < offsets[r + 1]; ++i) gx.row(i) = g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(ix, gx);
  });
}

Var composite_weights(Var alpha, std::vector<int> offsets) {
  Tape& t = tape_of(alpha, "composite_weights");
  if (alpha.cols() != 1) throw AutodiffError("composite_weights: alpha must be [S,1]");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != alpha.rows())
    throw AutodiffError("composite_weights: bad offsets");
  const Mat& a = alpha.value();
  Mat w(a.rows(), 1);
  for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
    double T = 1.0;
    for (int i = offsets[r]; i < offsets[r + 1]; ++i) {
      w(i, 0) = T * a(i, 0);
      T *= std::max(1.0 - a(i, 0), 1e-12);
    }
  }
  const int ia = alpha.index();
  return t.make_node(std::move(w), {ia}, "composite_weights",
                     [ia, offsets = std::move(offsets)](Tape& tp, const Mat& g) {
                       const Mat& a = tp.value_of(ia);
                       Mat ga = Mat::Zero(a.rows(), 1);
                       for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
                         const int lo = offsets[r], hi = offsets[r + 1];
                         // recompute T_i and w_i, then sweep suffix sums of g_i*w_i
                         std::vector<double> T(hi - lo), w(hi - lo);
                         double acc = 1.0;
                         for (int i = lo; i < hi; ++i) {
                           T[i - lo] = acc;
                           w[i - lo] = acc * a(i, 0);
                           acc *= std::max(1.0 - a(i, 0), 1e-12);
                         }
                         double suffix = 0.0;  // sum_{i>j} g_i w_i
                         for (int j = hi - 1; j >= lo; --j) {
                           const double onema = std::max(1.0 - a(j, 0), 1e-12);
                           ga(j, 0) = g(j, 0) * T[j - lo] - suffix / onema;
                           suffix += g(j, 0) * w[j - lo];
                         }
                       }
                       tp.accumulate(ia, ga);
                     });
}

// ---- graph-level entry points ----------------------------------------------

std::vector<Mat> evaluate(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs) {
  Tape tape(&store, false);
  std::vector<Var> in;
  in.reserve(inputs.size());
  for (const Mat& m : inputs) in.push_back(tape.input(m, false));
  std::vector<Var> out = program(tape, in);
  std::vector<Mat> values;
  values.reserve(out.size());
  for (const Var& v : out) values.push_back(v.value());
  return values;
}

GradientResult gradient(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs,
                        int output_index) {
  Tape tape(&store, true);
  std::vector<Var> in;
  in.reserve(inputs.size());
  for (const Mat& m : inputs) in.push_back(tape.input(m, true));
  std::vector<Var> out = program(tape, in);
  if (output_index < 0 || output_index >= static_cast<int>(out.size()))
    throw AutodiffError("gradient: output index out of range");
  Var target = out[output_index];
  if (target.value().size() != 1) throw AutodiffError("gradient: selected output is not scalar");
  tape.backward(target);
  GradientResult res;
  res.output = target.scalar();
  res.kink_margin = tape.kink_margin();
  for (const auto& [id, node] : tape.param_nodes()) res.wrt_params[id] = tape.param_grad(id);
  for (const Var& v : in) res.wrt_inputs.push_back(tape.grad(v));
  return res;
}

FdReport finite_difference_check(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs,
                                 const FdOptions& opt) {
  if (opt.step <= 0.0) throw AutodiffError("finite_difference_check: step must be positive");

  ParameterStore work;
  for (const auto& [id, p] : store.all()) work.create(id, p.shape).values = p.values;
  std::vector<Mat> in = inputs;

  GradientResult an = gradient(program, work, in, opt.output_index);

  auto eval_scalar = [&]() {
    Tape tape(&work, false);
    std::vector<Var> leaves;
    leaves.reserve(in.size());
    for (const Mat& m : in) leaves.push_back(tape.input(m, false));
    std::vector<Var> out = program(tape, leaves);
    return std::pair<double, double>(out[opt.output_index].scalar(), tape.kink_margin());
  };

  struct Coord {
    bool is_input;
    std::string id;
    int input_index;
    Eigen::Index flat;
  };
  std::vector<Coord> coords;
  for (const auto& [id, g] : an.wrt_params) {
    const Eigen::Index n = work.at(id).values.size();
    for (Eigen::Index k = 0; k < n; ++k) coords.push_back({false, id, -1, k});
  }
  if (opt.inputs_differentiable)
    for (std::size_t i = 0; i < in.size(); ++i)
      for (Eigen::Index k = 0; k < in[i].size(); ++k) coords.push_back({true, "", static_cast<int>(i), k});

  if (opt.max_coords > 0 && static_cast<int>(coords.size()) > opt.max_coords) {
    Rng rng(Rng::mix(opt.seed, 0x4664636f6f726473ull));
    rng.shuffle(coords);
    coords.resize(opt.max_coords);
  }

  FdReport report;
  report.coords_checked = static_cast<int>(coords.size());
  report.kink_margin = an.kink_margin;
  for (const Coord& c : coords) {
    double* slot = nullptr;
    double analytic = 0.0;
    if (c.is_input) {
      slot = in[c.input_index].data() + c.flat;
      analytic = an.wrt_inputs[c.input_index](c.flat);
    } else {
      slot = work.at(c.id).values.data() + c.flat;
      analytic = an.wrt_params[c.id](c.flat);
    }
    const double saved = *slot;
    *slot = saved + opt.step;
    auto [fplus, m1] = eval_scalar();
    *slot = saved - opt.step;
    auto [fminus, m2] = eval_scalar();
    *slot = saved;
    report.kink_margin = std::min({report.kink_margin, m1, m2});
    const double fd = (fplus - fminus) / (2.0 * opt.step);
    const double abs_err = std::abs(analytic - fd);
    if (abs_err <= opt.atol) continue;
    const double rel = abs_err / std::max(opt.denom_floor, std::abs(fd));
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace anisdf::ad
