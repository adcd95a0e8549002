#pragma once

#include <memory>
#include <string>
#include <vector>

#include "anisdf/appearance.hpp"
#include "anisdf/geometry_field.hpp"
#include "anisdf/renderer.hpp"

namespace anisdf {

// A compact randomized model used by the finite-difference suite: a small
// hash grid so checks stay fast, reference MLP widths.
struct GradCheckModel {
  GridConfig grid_cfg;
  std::unique_ptr<HashGrid> grid;
  std::unique_ptr<GeometryField> geometry;
  std::unique_ptr<Appearance> appearance;
  ParameterStore store;

  RenderModel model() const;
};

GradCheckModel make_gradcheck_model(std::uint64_t seed, int geometry_width = 64, int ref_width = 128);

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  int coords = 0;
  int seeds = 0;
  int rejected = 0;  // seeds skipped at kink margins below the FD span
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error < tolerance; }
};

// The full suite: every loss term, the hash encoding w.r.t. positions and
// entries, and the complete render-pixel graph on 4-sample rays.
// `seeds` random draws per case; coordinates subsampled per seed.
std::vector<GradCheckCase> run_gradient_suite(std::uint64_t seed, int seeds, int coords_per_seed);

}  // namespace anisdf
