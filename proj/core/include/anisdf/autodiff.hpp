#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "anisdf/params.hpp"

namespace anisdf::ad {

using Mat = Eigen::MatrixXd;

struct AutodiffError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Handle to one node of a recorded graph. Cheap to copy; owns nothing.
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  int index() const { return idx_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode tape over matrix-valued nodes. A forward pass records the
// graph; backward() runs one reverse sweep from a scalar node and leaves
// gradients on every reachable leaf. Construction with grad_enabled=false
// records values only (cheap inference mode, same code path).
//
// Reads of the bound ParameterStore are const; many tapes may run
// concurrently over one store as long as nobody mutates it.
class Tape {
 public:
  explicit Tape(const ParameterStore* store = nullptr, bool grad_enabled = true)
      : store_(store), grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v) { return make_leaf(std::move(v), false, "const"); }
  Var constant_scalar(double v) { return constant(Mat::Constant(1, 1, v)); }
  Var input(Mat v, bool requires_grad = false) { return make_leaf(std::move(v), requires_grad, "input"); }

  // Leaf bound to a store parameter. Cached: repeated calls with one id
  // return the same node, so gradients from all uses accumulate.
  Var param(const std::string& id);

  void backward(Var output);

  // Gradient of the last backward() w.r.t. an arbitrary node (zeros if the
  // node was not reached).
  Mat grad(Var v) const;
  // Gradient w.r.t. a parameter; exact zeros when the parameter was never
  // touched by the recorded graph.
  Mat param_grad(const std::string& id) const;
  bool param_touched(const std::string& id) const { return param_nodes_.count(id) != 0; }
  const std::unordered_map<std::string, int>& param_nodes() const { return param_nodes_; }

  bool grad_enabled() const { return grad_enabled_; }
  const ParameterStore* store() const { return store_; }

  // Smallest |pre-kink value| seen by any kinked primitive (relu family)
  // during the forward pass. Finite-difference tests reject configurations
  // whose margin is below the FD span, where central differences are
  // ill-defined.
  double kink_margin() const { return kink_margin_; }
  void note_kink_margin(double m) {
    if (m < kink_margin_) kink_margin_ = m;
  }

  // Introspection (used by graph property tests).
  int size() const { return static_cast<int>(nodes_.size()); }
  const char* op_name(int i) const { return nodes_[i].op; }
  const std::vector<int>& parents(int i) const { return nodes_[i].parents; }
  bool node_needs_grad(int i) const { return nodes_[i].needs_grad; }

  // --- below: machinery for op builders ---
  using BackwardFn = std::function<void(Tape&, const Mat& upstream)>;

  Var make_leaf(Mat value, bool needs_grad, const char* op);
  Var make_node(Mat value, std::vector<int> parents, const char* op, BackwardFn bw);
  const Mat& value_of(int idx) const { return nodes_[idx].value; }
  void accumulate(int idx, const Mat& g);

 private:
  struct Node {
    Mat value;
    Mat grad;  // allocated during backward
    std::vector<int> parents;
    BackwardFn backward;
    const char* op = "";
    bool needs_grad = false;
    bool grad_live = false;
  };

  const ParameterStore* store_;
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  bool ran_backward_ = false;
};

// ---- primitive operations -------------------------------------------------
// All builders validate shapes and record the op on the operands' tape.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);                       // elementwise
Var add_rowvec(Var a, Var row);              // [S,K] + [1,K] broadcast
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var bscale(Var a, Var s);                    // a * s, s is [1,1]
Var div_guarded(Var a, Var b, double eps);   // a / (b + eps), b >= 0 expected

Var sigmoid(Var a);
Var softplus(Var a, double beta = 1.0);
Var relu(Var a);                             // records kink margin; subgradient 0 at 0
Var exp(Var a);
Var log_clamped(Var a, double floor);        // ln(max(a, floor)); zero grad below floor
Var square(Var a);

Var sum(Var a);                              // -> [1,1]
Var mean(Var a);                             // -> [1,1]
Var rowwise_sum(Var a);                      // [S,K] -> [S,1]
Var rowwise_dot(Var a, Var b);               // [S,K],[S,K] -> [S,1]
Var rowwise_sqnorm(Var a);                   // [S,K] -> [S,1]
Var rowwise_norm(Var a, double eps = 0.0);   // sqrt(sqnorm + eps^2)
// Rows with norm below `threshold` return `fallback` and pass zero gradient.
Var rowwise_normalize(Var a, double threshold, const Eigen::RowVector3d& fallback);
Var colwise_scale(Var a, Var s);             // [S,K] * [S,1] broadcast

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, int from, int count);
Var gather_rows(Var a, std::vector<int> idx);
// out.row(r) = sum_j w(r,j) * table.row(idx(r,j)); idx/w are data, not nodes.
Var weighted_gather(Var table, Eigen::MatrixXi idx, Mat w);
// offsets has R+1 entries; out.row(r) = sum of x rows in [offsets[r], offsets[r+1]).
Var segment_sum(Var x, std::vector<int> offsets);
// Identity on y's values; during backward additionally routes gradients to x
// (an [S,3] leaf) through the supplied per-axis jacobian products
// dy_dx[k] = d(y)/d(x.col(k)). Lets values computed from x as plain data
// participate in reverse mode with an externally known first derivative.
Var attach_input_jacobian(Var y, Var x, const std::array<Mat, 3>& dy_dx);
// Front-to-back compositing weights w_i = alpha_i * prod_{j<i} (1 - alpha_j)
// per segment; transmittance factors clamped to >= 1e-12 for the backward.
Var composite_weights(Var alpha, std::vector<int> offsets);

// ---- graph-level entry points ----------------------------------------------

// A differentiable scalar program: records a graph onto the given tape from
// store parameters plus the supplied input leaves and returns the outputs.
using Program = std::function<std::vector<Var>(Tape&, const std::vector<Var>& inputs)>;

// Runs `program` on a fresh tape and returns output values. Deterministic:
// identical stores/inputs give bit-identical outputs.
std::vector<Mat> evaluate(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs);

struct GradientResult {
  std::map<std::string, Mat> wrt_params;  // every touched parameter
  std::vector<Mat> wrt_inputs;
  double output;
  double kink_margin;  // of the forward pass, see Tape::kink_margin
};

// Reverse-mode partials of one scalar output w.r.t. all touched parameters
// and all inputs. output_index selects among the program outputs, which must
// be [1,1] at that index.
GradientResult gradient(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs,
                        int output_index = 0);

struct FdOptions {
  double step = 1e-4;
  // Coordinates where |analytic - central| <= atol count as exact agreement;
  // below this the central difference is dominated by roundoff (~eps/step)
  // and certifies nothing about relative error.
  double atol = 1e-6;
  double denom_floor = 1e-8;
  // Check at most this many coordinates (deterministic subsample by `seed`);
  // -1 checks everything.
  int max_coords = -1;
  std::uint64_t seed = 0;
  bool inputs_differentiable = true;
  int output_index = 0;
};

struct FdReport {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  double kink_margin = std::numeric_limits<double>::infinity();
};

// Central-difference verification of `gradient` over parameter and input
// coordinates: max over coordinates of |analytic - fd| / max(floor, |fd|).
FdReport finite_difference_check(const Program& program, const ParameterStore& store, const std::vector<Mat>& inputs,
                                 const FdOptions& opt = {});

}  // namespace anisdf::ad
