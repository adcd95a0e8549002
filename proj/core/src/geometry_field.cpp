#include "anisdf/geometry_field.hpp"

#include <cmath>

namespace anisdf {

namespace {

MlpSpec branch_spec(const HashGrid& grid, const GeometryConfig& cfg, bool coarse) {
  MlpSpec s;
  s.input_dim = 3 + (coarse ? grid.config().coarse_dim() : grid.config().fine_dim());
  s.hidden_layers = cfg.hidden_layers;
  s.hidden_width = cfg.hidden_width;
  s.output_dim = 1 + cfg.feature_dim;
  s.hidden_activation = Activation::Softplus;
  s.output_activation = Activation::None;
  s.softplus_beta = cfg.softplus_beta;
  return s;
}

// Evenly spread unit directions (Fibonacci sphere).
Eigen::Vector3d fibonacci_dir(int i, int n) {
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  const double z = 1.0 - (2.0 * i + 1.0) / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = 2.0 * M_PI * i / golden;
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

GeometryField::GeometryField(const HashGrid* grid, GeometryConfig cfg)
    : grid_(grid),
      cfg_(cfg),
      coarse_("geom.coarse", branch_spec(*grid, cfg, true)),
      fine_("geom.fine", branch_spec(*grid, cfg, false)) {}

void GeometryField::register_params(ParameterStore& store, Rng& rng) const {
  // Coarse branch: deterministic spherical start. The first layer projects
  // the centered position onto `width` evenly spread directions scaled by K;
  // with near-rectifier softplus units the mean of the positive parts
  // recovers K/4 * ||x||, so the output row (4/(K*width)) * ones + bias -r
  // approximates ||x - center|| - r. Hash-feature columns start at zero.
  coarse_.register_params(store, rng, MlpInit::Zero);
  const int width = cfg_.hidden_width;
  const double K = 10.0;
  {
    Parameter& W0 = store.at(coarse_.weight_id(0));
    auto m = W0.matrix();
    for (int j = 0; j < width; ++j) m.block(0, j, 3, 1) = K * fibonacci_dir(j, width);
    for (int l = 1; l < coarse_.layer_count() - 1; ++l) {
      Parameter& W = store.at(coarse_.weight_id(l));
      W.matrix().setIdentity();
    }
    Parameter& Wout = store.at(coarse_.weight_id(coarse_.layer_count() - 1));
    auto out = Wout.matrix();
    out.col(0).setConstant(4.0 / (K * width));
    Parameter& bout = store.at(coarse_.bias_id(coarse_.layer_count() - 1));
    bout.matrix()(0, 0) = -cfg_.init_sphere_radius;
  }

  // Fine branch: live hidden layers, exactly-zero output so the fused field
  // starts as the coarse sphere and the branch wakes up through training.
  fine_.register_params(store, rng, MlpInit::HeNormal);
  store.at(fine_.weight_id(fine_.layer_count() - 1)).values.setZero();
  store.at(fine_.bias_id(fine_.layer_count() - 1)).values.setZero();
}

ad::Var GeometryField::branch_forward(ad::Tape& tape, const Mlp& mlp, const Eigen::MatrixXd& world_pts,
                                      const Eigen::MatrixXd& unit_pts, bool coarse,
                                      std::array<ad::Var, 3>* d_out) const {
  const Eigen::Index S = world_pts.rows();
  const Eigen::Vector3d center = 0.5 * (grid_->config().aabb_min + grid_->config().aabb_max);
  Eigen::MatrixXd centered = world_pts;
  centered.rowwise() -= center.transpose();

  std::array<ad::Var, 3> denc;
  ad::Var enc = coarse ? grid_->encode_coarse(tape, unit_pts, d_out ? &denc : nullptr)
                       : grid_->encode_fine(tape, unit_pts, d_out ? &denc : nullptr);
  ad::Var x = ad::concat_cols({tape.constant(centered), enc});
  if (!d_out) return mlp.forward(tape, x);

  std::array<ad::Var, 3> dx;
  for (int k = 0; k < 3; ++k) {
    ad::Mat seed = ad::Mat::Zero(S, 3);
    seed.col(k).setOnes();
    dx[k] = ad::concat_cols({tape.constant(seed), denc[k]});
  }
  ad::Var out = mlp.forward_with_tangents(tape, x, dx);
  *d_out = dx;
  return out;
}

GeometryField::BatchEval GeometryField::eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts, bool with_gradient,
                                             double fine_scale) const {
  BatchEval res;
  Eigen::MatrixXd unit = grid_->to_unit(world_pts, &res.clamped);

  std::array<ad::Var, 3> dc, df;
  ad::Var out_c = branch_forward(tape, coarse_, world_pts, unit, true, with_gradient ? &dc : nullptr);
  ad::Var fused = out_c;
  std::array<ad::Var, 3> dsum = dc;
  if (fine_scale > 0.0) {
    ad::Var out_f = branch_forward(tape, fine_, world_pts, unit, false, with_gradient ? &df : nullptr);
    if (fine_scale != 1.0) {
      out_f = ad::scale(out_f, fine_scale);
      if (with_gradient)
        for (int k = 0; k < 3; ++k) df[k] = ad::scale(df[k], fine_scale);
    }
    fused = ad::add(out_c, out_f);
    if (with_gradient)
      for (int k = 0; k < 3; ++k) dsum[k] = ad::add(dc[k], df[k]);
  }

  res.sdf = ad::slice_cols(fused, 0, 1);
  res.feature = ad::slice_cols(fused, 1, cfg_.feature_dim);
  if (with_gradient) {
    std::vector<ad::Var> g;
    for (int k = 0; k < 3; ++k) g.push_back(ad::slice_cols(dsum[k], 0, 1));
    res.gradient = ad::concat_cols(g);
    res.normal = ad::rowwise_normalize(res.gradient, 1e-9, Eigen::RowVector3d(0, 0, 1));
  }
  return res;
}

std::pair<ad::Var, ad::Var> GeometryField::branch_eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts,
                                                       int branch) const {
  if (branch != 0 && branch != 1) throw std::invalid_argument("branch_eval: branch must be 0 (coarse) or 1 (fine)");
  Eigen::MatrixXd unit = grid_->to_unit(world_pts);
  ad::Var out = branch_forward(tape, branch == 0 ? coarse_ : fine_, world_pts, unit, branch == 0, nullptr);
  return {ad::slice_cols(out, 0, 1), ad::slice_cols(out, 1, cfg_.feature_dim)};
}

FieldSample GeometryField::sample(const ParameterStore& store, const Eigen::Vector3d& x, double fine_scale) const {
  ad::Tape tape(&store, false);
  BatchEval e = eval(tape, x.transpose(), true, fine_scale);
  FieldSample s;
  s.position = x;
  s.sdf = e.sdf.value()(0, 0);
  s.feature = e.feature.value().row(0);
  s.raw_gradient = e.gradient.value().row(0);
  s.normal = e.normal.value().row(0);
  return s;
}

Eigen::VectorXd GeometryField::sdf_values(const ParameterStore& store, const Eigen::MatrixXd& world_pts,
                                          double fine_scale) const {
  ad::Tape tape(&store, false);
  BatchEval e = eval(tape, world_pts, false, fine_scale);
  return e.sdf.value().col(0);
}

double GeometryField::eikonal_residual(const ParameterStore& store, const Eigen::Vector3d& x,
                                       double fine_scale) const {
  FieldSample s = sample(store, x, fine_scale);
  const double n = s.raw_gradient.norm();
  return (n - 1.0) * (n - 1.0);
}

}  // namespace anisdf
