#include "anisdf/losses.hpp"

namespace anisdf::losses {

ad::Var rgb_loss(ad::Tape& tape, ad::Var colors, const Eigen::MatrixXd& gt) {
  if (colors.rows() != gt.rows() || colors.cols() != gt.cols())
    throw std::invalid_argument("rgb_loss: pixel count mismatch");
  ad::Var diff = ad::sub(colors, tape.constant(gt));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(gt.rows()));
}

ad::Var eikonal_loss(ad::Var gradients) {
  ad::Var norms = ad::rowwise_norm(gradients, 1e-12);
  return ad::mean(ad::square(ad::add_const(norms, -1.0)));
}

ad::Var curvature_loss(ad::Var normals, ad::Var normals_perturbed) {
  ad::Var dots = ad::rowwise_dot(normals, normals_perturbed);
  return ad::mean(ad::square(ad::add_const(dots, -1.0)));
}

ad::Var orientation_loss(ad::Var weights, ad::Var normals, const Eigen::MatrixXd& dirs,
                         const std::vector<int>& offsets, int n_rays) {
  if (n_rays < 1) throw std::invalid_argument("orientation_loss: n_rays must be positive");
  ad::Tape& tape = *weights.tape();
  ad::Var facing = ad::rowwise_dot(normals, tape.constant(dirs));
  ad::Var per_sample = ad::mul(weights, ad::square(ad::relu(facing)));
  (void)offsets;  // the ray structure only matters for the normalization
  return ad::scale(ad::sum(per_sample), 1.0 / static_cast<double>(n_rays));
}

ad::Var alpha_entropy_loss(ad::Var alphas) {
  ad::Var one_minus = ad::add_const(ad::neg(alphas), 1.0);
  ad::Var term = ad::add(ad::mul(alphas, ad::log_clamped(alphas, 1e-7)),
                         ad::mul(one_minus, ad::log_clamped(one_minus, 1e-7)));
  return ad::neg(ad::mean(term));
}

ad::Var total_loss(const Terms& t, const LossWeights& w) {
  w.validate();
  ad::Var total = t.rgb;
  total = ad::add(total, ad::scale(t.eik, w.eikonal));
  total = ad::add(total, ad::scale(t.curv, w.curvature));
  total = ad::add(total, ad::scale(t.orient, w.orientation));
  total = ad::add(total, ad::scale(t.alpha, w.alpha));
  return total;
}

LossReport report(const Terms& t, ad::Var total, const LossWeights& w) {
  LossReport r;
  r.rgb = t.rgb.scalar();
  r.eik = t.eik.scalar();
  r.curv = t.curv.scalar();
  r.orient = t.orient.scalar();
  r.alpha = t.alpha.scalar();
  r.total = total.scalar();
  (void)w;
  return r;
}

double rgb_loss_value(const Eigen::MatrixXd& colors, const Eigen::MatrixXd& gt) {
  ad::Tape tape(nullptr, false);
  return rgb_loss(tape, tape.constant(colors), gt).scalar();
}

double alpha_entropy_value(const Eigen::VectorXd& alphas) {
  ad::Tape tape(nullptr, false);
  return alpha_entropy_loss(tape.constant(alphas)).scalar();
}

}  // namespace anisdf::losses
