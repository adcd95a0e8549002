#pragma once

#include <string>

#include "anisdf/appearance.hpp"
#include "anisdf/geometry_field.hpp"
#include "anisdf/hashgrid.hpp"
#include "anisdf/losses.hpp"
#include "anisdf/renderer.hpp"

namespace anisdf {

// Everything a training run depends on. Defaults follow the reference
// configuration; toy runs override sizes through the config file or flags.
struct TrainConfig {
  std::string dataset_dir;
  std::string out_dir = "run";
  int image_downscale = 1;

  int rays_per_batch = 1024;
  int total_steps = 20000;
  double learning_rate = 1e-3;
  double learning_rate_final = 1e-4;
  std::uint64_t seed = 0;

  int fine_warmup_steps = 1000;
  bool fine_enabled = true;
  double init_sharpness = 20.0;

  LossWeights loss;
  double curvature_eps = 0.01;
  double curvature_boost = 10.0;       // early multiplier on the curvature weight
  double curvature_boost_frac = 0.1;   // fraction of steps it applies to
  int eikonal_points = 128;
  double eikonal_sigma = 0.05;

  GridConfig grid;
  GeometryConfig geometry;
  AppearanceConfig appearance;
  RenderOptions render;

  int checkpoint_interval = 5000;
  int log_interval = 10;
  int n_chunks = 4;  // fixed work partition; worker count never changes results
  int threads = 0;

  void validate() const;
};

// "[section]\nkey = value" round-trip; unknown keys are rejected so typos
// surface early. Used by the config file, --print-config and checkpoints.
std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_text(const std::string& text);
void apply_config_line(TrainConfig& cfg, const std::string& section, const std::string& key, const std::string& value);

}  // namespace anisdf
