#include "anisdf/appearance.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace anisdf {

Eigen::Vector2d asg_eval(const ASGLobe& lobe, const Eigen::Vector3d& omega) {
  const double s = std::max(omega.dot(lobe.z), 0.0);
  const double ax = omega.dot(lobe.x);
  const double ay = omega.dot(lobe.y);
  return lobe.xi * (s * std::exp(-lobe.lambda * ax * ax - lobe.mu * ay * ay));
}

Eigen::Vector3d reflect(const Eigen::Vector3d& d, const Eigen::Vector3d& n) {
  return 2.0 * (-d.dot(n)) * n + d;
}

Eigen::Vector3d blend(const Eigen::Vector3d& c_view, const Eigen::Vector3d& c_ref, double w) {
  return w * c_view + (1.0 - w) * c_ref;
}

namespace {

Eigen::Vector3d fibonacci_dir(int i, int n) {
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  const double z = 1.0 - (2.0 * i + 1.0) / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = 2.0 * M_PI * i / golden;
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

ASGBank::ASGBank(int n_lobes) {
  if (n_lobes < 1) throw std::invalid_argument("ASGBank: need at least one lobe");
  const Eigen::Vector3d helper(0.276172, 0.623456, 0.731418);  // fixed, not axis-aligned
  const Eigen::Vector3d alternate(1.0, 0.0, 0.0);
  frames_.resize(n_lobes);
  for (int i = 0; i < n_lobes; ++i) {
    ASGLobe& l = frames_[i];
    l.z = fibonacci_dir(i, n_lobes);
    Eigen::Vector3d h = std::abs(helper.dot(l.z)) < 0.95 ? helper : alternate;
    l.x = (h - h.dot(l.z) * l.z).normalized();
    l.y = l.z.cross(l.x);
  }
}

Appearance::Appearance(const HashGrid* grid, AppearanceConfig cfg)
    : grid_(grid),
      cfg_(cfg),
      bank_(cfg.n_lobes),
      f_par_("app.fpar",
             MlpSpec{cfg.feature_dim + 3, cfg.fpar_layers, cfg.fpar_hidden, 4 * cfg.n_lobes, Activation::ReLU,
                     Activation::None}),
      psi_v_("app.psi_v",
             MlpSpec{grid->config().coarse_dim() + 3 + 6 * cfg.dir_bands + 3 + cfg.feature_dim, cfg.view_layers,
                     cfg.view_hidden, 3, Activation::ReLU, Activation::Sigmoid}),
      psi_r_("app.psi_r",
             MlpSpec{2 * cfg.n_lobes + 3, cfg.ref_layers, cfg.ref_hidden, 3, Activation::ReLU, Activation::Sigmoid}),
      psi_w_("app.psi_w",
             MlpSpec{grid->config().coarse_dim() + 3 + cfg.feature_dim, cfg.weight_layers, cfg.weight_hidden, 1,
                     Activation::ReLU, Activation::Sigmoid}) {}

void Appearance::register_params(ParameterStore& store, Rng& rng) const {
  f_par_.register_params(store, rng);
  psi_v_.register_params(store, rng);
  psi_r_.register_params(store, rng);
  psi_w_.register_params(store, rng);
}

Eigen::MatrixXd Appearance::encode_dirs(const Eigen::MatrixXd& dirs) const {
  const Eigen::Index S = dirs.rows();
  Eigen::MatrixXd out(S, 3 + 6 * cfg_.dir_bands);
  out.leftCols(3) = dirs;
  int at = 3;
  for (int b = 0; b < cfg_.dir_bands; ++b) {
    const double f = std::pow(2.0, b);
    out.middleCols(at, 3) = (dirs * f).array().sin();
    out.middleCols(at + 3, 3) = (dirs * f).array().cos();
    at += 6;
  }
  return out;
}

ad::Var Appearance::reflect_batch(ad::Tape& tape, ad::Var d, ad::Var n) const {
  ad::Var dot = ad::rowwise_dot(d, n);                      // [S,1]
  return ad::add(ad::colwise_scale(n, ad::scale(dot, -2.0)), d);
}

ad::Var Appearance::asg_params(ad::Tape& tape, ad::Var feature, ad::Var normal) const {
  ad::Var raw = f_par_.forward(tape, ad::concat_cols({feature, normal}));
  std::vector<ad::Var> cols;
  for (int i = 0; i < cfg_.n_lobes; ++i) {
    cols.push_back(ad::softplus(ad::slice_cols(raw, 4 * i, 1), 1.0));       // lambda
    cols.push_back(ad::softplus(ad::slice_cols(raw, 4 * i + 1, 1), 1.0));   // mu
    cols.push_back(ad::sigmoid(ad::slice_cols(raw, 4 * i + 2, 2)));         // xi in [0,1]^2
  }
  return ad::concat_cols(cols);
}

ad::Var Appearance::asg_feature(ad::Tape& tape, ad::Var omega_r, ad::Var params) const {
  std::vector<ad::Var> lobes;
  for (int i = 0; i < cfg_.n_lobes; ++i) {
    const ASGLobe& fr = bank_.frame(i);
    ad::Var lambda = ad::slice_cols(params, 4 * i, 1);
    ad::Var mu = ad::slice_cols(params, 4 * i + 1, 1);
    ad::Var xi = ad::slice_cols(params, 4 * i + 2, 2);
    ad::Var ax = ad::matmul(omega_r, tape.constant(fr.x));
    ad::Var ay = ad::matmul(omega_r, tape.constant(fr.y));
    ad::Var az = ad::matmul(omega_r, tape.constant(fr.z));
    ad::Var smooth = ad::relu(az);
    ad::Var expo = ad::exp(ad::neg(ad::add(ad::mul(lambda, ad::square(ax)), ad::mul(mu, ad::square(ay)))));
    lobes.push_back(ad::colwise_scale(xi, ad::mul(smooth, expo)));
  }
  return ad::concat_cols(lobes);
}

ad::Var Appearance::view_color(ad::Tape& tape, const Eigen::MatrixXd& world_pts, const Eigen::MatrixXd& dirs,
                               ad::Var normal, ad::Var feature) const {
  Eigen::MatrixXd unit = grid_->to_unit(world_pts);
  ad::Var enc = grid_->encode_coarse(tape, unit);
  ad::Var dir_enc = tape.constant(encode_dirs(dirs));
  return psi_v_.forward(tape, ad::concat_cols({enc, dir_enc, normal, feature}));
}

ad::Var Appearance::ref_color(ad::Tape& tape, ad::Var asg_feat, ad::Var omega_r) const {
  return psi_r_.forward(tape, ad::concat_cols({asg_feat, omega_r}));
}

ad::Var Appearance::blend_weight(ad::Tape& tape, const Eigen::MatrixXd& world_pts, ad::Var normal,
                                 ad::Var feature) const {
  Eigen::MatrixXd unit = grid_->to_unit(world_pts);
  ad::Var enc = grid_->encode_coarse(tape, unit);
  return psi_w_.forward(tape, ad::concat_cols({enc, normal, feature}));
}

Appearance::Eval Appearance::eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts, const Eigen::MatrixXd& dirs,
                                  ad::Var normal, ad::Var feature) const {
  Eval e;
  ad::Var d = tape.constant(dirs);
  e.omega_r = reflect_batch(tape, d, normal);
  ad::Var params = asg_params(tape, feature, normal);
  ad::Var asg = asg_feature(tape, e.omega_r, params);
  e.c_view = view_color(tape, world_pts, dirs, normal, feature);
  e.c_ref = ref_color(tape, asg, e.omega_r);
  e.w = blend_weight(tape, world_pts, normal, feature);
  ad::Var one_minus_w = ad::add_const(ad::neg(e.w), 1.0);
  e.color = ad::add(ad::colwise_scale(e.c_view, e.w), ad::colwise_scale(e.c_ref, one_minus_w));
  return e;
}

}  // namespace anisdf
