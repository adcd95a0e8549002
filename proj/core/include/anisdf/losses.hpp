#pragma once

#include <Eigen/Core>
#include <vector>

#include "anisdf/autodiff.hpp"

namespace anisdf {

struct LossWeights {
  double eikonal = 0.1;      // lambda1
  double curvature = 0.001;  // lambda2
  double orientation = 0.001;// lambda3
  double alpha = 0.01;       // lambda4

  void validate() const {
    if (eikonal < 0 || curvature < 0 || orientation < 0 || alpha < 0)
      throw std::invalid_argument("LossWeights: negative weight");
  }
};

struct LossReport {
  double rgb = 0, eik = 0, curv = 0, orient = 0, alpha = 0, total = 0;
};

namespace losses {

// Mean over rows of ||C - C_gt||^2.
ad::Var rgb_loss(ad::Tape& tape, ad::Var colors, const Eigen::MatrixXd& gt);

// Mean of (||grad f|| - 1)^2 over the given gradient rows.
ad::Var eikonal_loss(ad::Var gradients);

// Mean of (n . n_eps - 1)^2; the two normal batches come from evaluating the
// field at x and at x + eps*tau with tau a random unit tangent.
ad::Var curvature_loss(ad::Var normals, ad::Var normals_perturbed);

// Mean over n_rays of sum_i w_i * max(0, n_i . d_i)^2 per ray. Rays beyond
// the offsets (e.g. rays that missed the scene bounds) contribute zero but
// count in the denominator.
ad::Var orientation_loss(ad::Var weights, ad::Var normals, const Eigen::MatrixXd& dirs,
                         const std::vector<int>& offsets, int n_rays);

// Mean binary self-entropy -[a ln a + (1-a) ln(1-a)], logs clamped at 1e-7.
ad::Var alpha_entropy_loss(ad::Var alphas);

struct Terms {
  ad::Var rgb, eik, curv, orient, alpha;
};

// total = rgb + l1*eik + l2*curv + l3*orient + l4*alpha, summed left to
// right; LossReport reproduces the same floating-point association.
ad::Var total_loss(const Terms& t, const LossWeights& w);
LossReport report(const Terms& t, ad::Var total, const LossWeights& w);

// Plain-value convenience wrappers (no-grad tape underneath).
double rgb_loss_value(const Eigen::MatrixXd& colors, const Eigen::MatrixXd& gt);
double alpha_entropy_value(const Eigen::VectorXd& alphas);

}  // namespace losses
}  // namespace anisdf
