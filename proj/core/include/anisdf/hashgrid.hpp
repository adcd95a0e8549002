#pragma once

#include <Eigen/Core>
#include <array>
#include <string>

#include "anisdf/autodiff.hpp"
#include "anisdf/params.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

// Multiresolution hash-grid layout. Levels are 1-based; the coarse set spans
// [coarse_min, level_m], the fine set [level_m, level_L] — level_m belongs to
// both sets and its table is shared.
struct GridConfig {
  int total_levels = 16;
  int coarse_min = 4;
  int level_m = 10;
  int level_L = 16;
  int base_resolution = 16;
  int max_resolution = 2048;
  int features_per_level = 2;
  int table_size = 1 << 19;
  Eigen::Vector3d aabb_min = {-1.0, -1.0, -1.0};
  Eigen::Vector3d aabb_max = {1.0, 1.0, 1.0};

  void validate() const;
  int coarse_levels() const { return level_m - coarse_min + 1; }
  int fine_levels() const { return level_L - level_m + 1; }
  int coarse_dim() const { return coarse_levels() * features_per_level; }
  int fine_dim() const { return fine_levels() * features_per_level; }
  // A short signature used to reject checkpoints from mismatched grids.
  std::string signature() const;
};

// Geometric schedule between base_resolution and max_resolution; endpoints are
// exact, interior levels round to the nearest integer.
int level_resolution(int level, const GridConfig& cfg);

// Index of a corner of the level-`level` lattice into that level's table.
// Injective row-major indexing while the (N+1)^3 lattice fits the table,
// XOR hashing with primes (1, 2654435761, 805459861) mod T otherwise.
int hash_index(const Eigen::Vector3i& cell, int level, const GridConfig& cfg);
bool level_is_dense(int level, const GridConfig& cfg);

class HashGrid {
 public:
  explicit HashGrid(GridConfig cfg);

  // Entries initialized uniform in [-init_scale, init_scale].
  void register_params(ParameterStore& store, Rng& rng, double init_scale = 1e-4) const;

  const GridConfig& config() const { return cfg_; }
  std::string table_id(int level) const;
  int table_entries(int level) const;

  // World -> unit cube; counts points that had to be clamped to the cube.
  Eigen::MatrixXd to_unit(const Eigen::MatrixXd& world_pts, int* clamped = nullptr) const;

  // Trilinear interpolation of one level's entries at unit-cube points.
  // If d_world is non-null it receives d(feature)/d(world x_k) as tape nodes.
  ad::Var encode_level(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, int level,
                       std::array<ad::Var, 3>* d_world = nullptr) const;

  // Concatenated features over an inclusive level range, ascending order.
  ad::Var encode_range(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, int lo, int hi,
                       std::array<ad::Var, 3>* d_world = nullptr) const;

  ad::Var encode_coarse(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, std::array<ad::Var, 3>* d_world = nullptr) const;
  ad::Var encode_fine(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, std::array<ad::Var, 3>* d_world = nullptr) const;

  // Distance from each point to its nearest lattice plane across the given
  // levels, in unit-cube units. Finite-difference tests reject points whose
  // margin is below the FD span (trilinear interpolation kinks there).
  double lattice_margin(const Eigen::MatrixXd& unit_pts, int lo, int hi) const;

 private:
  GridConfig cfg_;
};

}  // namespace anisdf
