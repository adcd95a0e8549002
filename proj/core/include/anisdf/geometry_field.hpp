#pragma once

#include <Eigen/Core>
#include <array>

#include "anisdf/autodiff.hpp"
#include "anisdf/hashgrid.hpp"
#include "anisdf/mlp.hpp"

namespace anisdf {

struct GeometryConfig {
  int hidden_width = 64;
  int hidden_layers = 2;
  int feature_dim = 15;  // sdf + feature = 16 branch outputs
  double softplus_beta = 100.0;
  double init_sphere_radius = 0.5;
};

// Single-point result; batched evaluation goes through eval().
struct FieldSample {
  Eigen::Vector3d position;
  double sdf = 0.0;
  Eigen::VectorXd feature;
  Eigen::Vector3d normal;
  Eigen::Vector3d raw_gradient;
};

// The fused-granularity SDF: a coarse branch over the low-resolution
// encoding and a fine branch over the high-resolution encoding, with SDF
// values and geometric features summed. Branch inputs are the grid features
// concatenated with the AABB-centered position, which lets the coarse branch
// start from a spherical initialization.
class GeometryField {
 public:
  GeometryField(const HashGrid* grid, GeometryConfig cfg);

  void register_params(ParameterStore& store, Rng& rng) const;

  struct BatchEval {
    ad::Var sdf;       // [S,1]
    ad::Var feature;   // [S,feature_dim]
    ad::Var gradient;  // [S,3] world-space grad(f); only if with_gradient
    ad::Var normal;    // [S,3] unit, guarded
    int clamped = 0;
  };

  // fine_scale in [0,1] scales the fine branch output (progressive warmup);
  // fine_scale <= 0 removes the branch from the graph entirely, which is the
  // coarse-only ablation.
  BatchEval eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts, bool with_gradient = true,
                 double fine_scale = 1.0) const;

  // branch 0 = coarse, 1 = fine. Returns (sdf [S,1], feature [S,feature_dim]).
  std::pair<ad::Var, ad::Var> branch_eval(ad::Tape& tape, const Eigen::MatrixXd& world_pts, int branch) const;

  // Convenience single/batch no-grad evaluation (normals still exact).
  FieldSample sample(const ParameterStore& store, const Eigen::Vector3d& x, double fine_scale = 1.0) const;
  Eigen::VectorXd sdf_values(const ParameterStore& store, const Eigen::MatrixXd& world_pts,
                             double fine_scale = 1.0) const;

  double eikonal_residual(const ParameterStore& store, const Eigen::Vector3d& x, double fine_scale = 1.0) const;

  const HashGrid& grid() const { return *grid_; }
  const GeometryConfig& config() const { return cfg_; }
  const Mlp& coarse_mlp() const { return coarse_; }
  const Mlp& fine_mlp() const { return fine_; }

 private:
  ad::Var branch_forward(ad::Tape& tape, const Mlp& mlp, const Eigen::MatrixXd& world_pts,
                         const Eigen::MatrixXd& unit_pts, bool coarse, std::array<ad::Var, 3>* d_out) const;

  const HashGrid* grid_;
  GeometryConfig cfg_;
  Mlp coarse_;
  Mlp fine_;
};

}  // namespace anisdf
