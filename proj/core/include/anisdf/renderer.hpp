#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "anisdf/appearance.hpp"
#include "anisdf/geometry_field.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;  // unit, camera -> scene
};

struct Camera {
  Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();
  double fov_x = 0.6911112;  // horizontal, radians
  int width = 64;
  int height = 64;

  void validate() const;  // rotation block orthonormal to 1e-6
  Eigen::Vector3d position() const { return cam_to_world.block<3, 1>(0, 3); }
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double fov_x, int width, int height);
};

// Pinhole ray through pixel (px, py) at subpixel offset (ox, oy) in [0,1).
// Convention: camera looks down -z, +x right, +y up (pixel rows grow down).
Ray generate_ray(const Camera& cam, int px, int py, double ox = 0.5, double oy = 0.5);

// Slab intersection with an axis-aligned box; returns (near, far) with
// near >= min_near, or nothing on a miss.
std::optional<std::pair<double, double>> intersect_aabb(const Ray& ray, const Eigen::Vector3d& lo,
                                                        const Eigen::Vector3d& hi, double min_near = 0.0);

// Stratified uniform distances; rng == nullptr places samples at bin centers.
Eigen::VectorXd sample_uniform(double near, double far, int count, Rng* rng);

// Inverse-CDF draws from per-interval weights (t has n entries, weights n-1);
// all-zero weights fall back to uniform. Result is the sorted merge of the
// originals and the new samples.
Eigen::VectorXd importance_resample(const Eigen::VectorXd& t, const Eigen::VectorXd& interval_weights, int count,
                                    Rng* rng);

// Eq. alpha conversion: max((phi(s*f_i) - phi(s*f_next)) / phi(s*f_i), 0).
double sdf_to_alpha(double f_i, double f_next, double s);

struct CompositeResult {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  Eigen::VectorXd weights;
  Eigen::VectorXd transmittance;  // T_i before each sample, T_1 = 1
};
CompositeResult composite(const Eigen::VectorXd& alphas, const Eigen::MatrixXd& colors);

// Ordered quadrature record of one ray (diagnostics and invariant tests).
struct RaySampleSet {
  Ray ray;
  Eigen::VectorXd t;       // ascending
  Eigen::VectorXd delta;   // t_i - t_{i-1}
  Eigen::VectorXd sdf;
  Eigen::VectorXd alpha;   // one per interval, last sample has none
  Eigen::VectorXd T;       // transmittance per interval
  Eigen::VectorXd w;       // T_i * alpha_i
  Eigen::MatrixXd color;   // per-interval blended sample colors
  Eigen::MatrixXd c_view, c_ref;
  Eigen::VectorXd blend_w;
  Eigen::MatrixXd normal;
  bool hit_aabb = false;
};

struct RenderOptions {
  int n_uniform = 64;
  int n_importance = 16;
  int importance_rounds = 2;
  bool stratified = true;
  Eigen::Vector3d background = {1.0, 1.0, 1.0};
  bool per_sample_blend = true;  // false: composite the two fields, blend once per pixel
  double fine_scale = 1.0;       // <=0 is the coarse-only ablation
  double min_near = 5e-2;
};

struct RenderModel {
  const HashGrid* grid = nullptr;
  const GeometryField* geometry = nullptr;
  const Appearance* appearance = nullptr;
  static constexpr const char* kSharpnessId = "render.s_raw";

  // s = exp(raw) > 0; registered with s(0) = init_s.
  static void register_sharpness(ParameterStore& store, double init_s = 20.0);
  static double sharpness(const ParameterStore& store);
};

// One differentiable render of a ray batch. Rays that miss the AABB are
// reported in `miss` and excluded from the graph; their pixel color is the
// background.
struct BatchRender {
  ad::Var color;           // [H,3] hit rays only, background composited
  ad::Var weights;         // [P,1] compositing weights
  ad::Var alphas;          // [P,1]
  ad::Var opacity;         // [H,1]
  ad::Var normals;         // [P,3] at interval heads
  ad::Var blend_w;         // [P,1]
  ad::Var sample_colors;   // [P,3] per-sample blended colors
  ad::Var c_view, c_ref;   // [P,3]
  std::vector<int> hit_rays;      // indices into the input span
  std::vector<char> miss;         // per input ray
  std::vector<int> sample_offsets;  // H+1, into S
  std::vector<int> pair_offsets;    // H+1, into P
  Eigen::MatrixXd sample_pos;       // [S,3]
  Eigen::MatrixXd sample_dirs;      // [S,3]
  Eigen::MatrixXd pair_pos;         // [P,3]
  Eigen::MatrixXd pair_dirs;        // [P,3]
  Eigen::VectorXd pair_t;           // [P] interval start distances
  int n_samples() const { return static_cast<int>(sample_pos.rows()); }
};

BatchRender render_rays(ad::Tape& tape, const RenderModel& model, const std::vector<Ray>& rays,
                        const RenderOptions& opt, std::uint64_t sample_seed);

// Plain-value outputs of a full-pixel render.
struct RenderOutput {
  Eigen::Vector3d color;
  double depth = 0.0;
  double opacity = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  double mean_blend_w = 0.5;
};

RenderOutput render_pixel(const ParameterStore& store, const RenderModel& model, const Camera& cam, int px, int py,
                          const RenderOptions& opt, std::uint64_t seed = 0);

// Diagnostic single-ray record (no-grad).
RaySampleSet render_ray_detail(const ParameterStore& store, const RenderModel& model, const Ray& ray,
                               const RenderOptions& opt, std::uint64_t seed = 0);

struct ImageBuffers {
  int width = 0, height = 0;
  Eigen::MatrixXd rgb;      // (H*W) x 3, row-major pixels
  Eigen::VectorXd depth;    // H*W
  Eigen::VectorXd opacity;  // H*W
  Eigen::MatrixXd normal;   // (H*W) x 3
  Eigen::VectorXd blend_w;  // H*W mean blend weight per pixel (0.5 where empty)
};

// Full-frame no-grad render, parallel over pixel chunks.
ImageBuffers render_image(const ParameterStore& store, const RenderModel& model, const Camera& cam,
                          const RenderOptions& opt, std::uint64_t seed = 0, int threads = 0);

}  // namespace anisdf
