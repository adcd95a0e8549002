#pragma once

#include <Eigen/Core>
#include <vector>

#include "anisdf/autodiff.hpp"
#include "anisdf/geometry_field.hpp"
#include "anisdf/hashgrid.hpp"
#include "anisdf/mlp.hpp"

namespace anisdf {

// One anisotropic spherical Gaussian. The frame is a fixed orthonormal basis
// [x, y, z] (tangent, bi-tangent, lobe axis); sharpness (lambda, mu) shapes
// the falloff along x and y, xi is the two-channel amplitude.
struct ASGLobe {
  Eigen::Vector3d x, y, z;
  double lambda = 0.0;
  double mu = 0.0;
  Eigen::Vector2d xi = Eigen::Vector2d::Zero();
};

// xi * max(w.z, 0) * exp(-lambda (w.x)^2 - mu (w.y)^2)
Eigen::Vector2d asg_eval(const ASGLobe& lobe, const Eigen::Vector3d& omega);

// Mirror of the view direction about the normal: 2(-d.n)n + d.
// d points camera -> scene; both inputs unit length.
Eigen::Vector3d reflect(const Eigen::Vector3d& d, const Eigen::Vector3d& n);

// Convex combination w*c_view + (1-w)*c_ref.
Eigen::Vector3d blend(const Eigen::Vector3d& c_view, const Eigen::Vector3d& c_ref, double w);

struct BlendedColor {
  Eigen::Vector3d c_view, c_ref;
  double w = 0.5;
  Eigen::Vector3d color;
};

// Fixed lobe frames with per-query sharpness/amplitude predicted by f_par.
class ASGBank {
 public:
  explicit ASGBank(int n_lobes);
  int size() const { return static_cast<int>(frames_.size()); }
  const ASGLobe& frame(int i) const { return frames_[i]; }

 private:
  std::vector<ASGLobe> frames_;  // lambda/mu/xi unused here, frames only
};

struct AppearanceConfig {
  int n_lobes = 8;
  int feature_dim = 15;
  int view_hidden = 64, view_layers = 2;
  int ref_hidden = 128, ref_layers = 2;
  int weight_hidden = 64, weight_layers = 1;
  int fpar_hidden = 64, fpar_layers = 2;
  int dir_bands = 4;  // sinusoidal bands on the raw view direction
};

// The blended radiance fields: a view-conditioned color, a
// reflection-conditioned color queried through the ASG encoding, and a
// learned weight field mixing them.
class Appearance {
 public:
  Appearance(const HashGrid* grid, AppearanceConfig cfg);

  void register_params(ParameterStore& store, Rng& rng) const;

  struct Eval {
    ad::Var c_view;  // [S,3]
    ad::Var c_ref;   // [S,3]
    ad::Var w;       // [S,1]
    ad::Var color;   // [S,3] per-sample blend
    ad::Var omega_r; // [S,3]
  };

  // dirs are data (unit, camera->scene); normal/feature are graph nodes from
  // the geometry field.
  Eval eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts, const Eigen::MatrixXd& dirs, ad::Var normal,
            ad::Var feature) const;

  // Pieces, exposed for tests and for the pixel-level blend mode.
  ad::Var reflect_batch(ad::Tape& tape, ad::Var d, ad::Var n) const;
  // -> [S, 4*n_lobes] columns per lobe: lambda, mu, xi0, xi1 (constrained).
  ad::Var asg_params(ad::Tape& tape, ad::Var feature, ad::Var normal) const;
  ad::Var asg_feature(ad::Tape& tape, ad::Var omega_r, ad::Var params) const;  // [S, 2*n_lobes]
  ad::Var view_color(ad::Tape& tape, const Eigen::MatrixXd& world_pts, const Eigen::MatrixXd& dirs, ad::Var normal,
                     ad::Var feature) const;
  ad::Var ref_color(ad::Tape& tape, ad::Var asg_feat, ad::Var omega_r) const;
  ad::Var blend_weight(ad::Tape& tape, const Eigen::MatrixXd& world_pts, ad::Var normal, ad::Var feature) const;

  Eigen::MatrixXd encode_dirs(const Eigen::MatrixXd& dirs) const;
  const ASGBank& bank() const { return bank_; }
  const AppearanceConfig& config() const { return cfg_; }
  const Mlp& psi_v() const { return psi_v_; }
  const Mlp& psi_r() const { return psi_r_; }
  const Mlp& psi_w() const { return psi_w_; }
  const Mlp& f_par() const { return f_par_; }

 private:
  const HashGrid* grid_;
  AppearanceConfig cfg_;
  ASGBank bank_;
  Mlp f_par_;
  Mlp psi_v_;
  Mlp psi_r_;
  Mlp psi_w_;
};

}  // namespace anisdf
