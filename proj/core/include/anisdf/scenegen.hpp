#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "anisdf/image.hpp"
#include "anisdf/renderer.hpp"

namespace anisdf {

enum class SceneKind { Sphere, Torus, Rods, MirrorSphere, Composite };

SceneKind scene_kind_from_name(const std::string& name);
const char* scene_kind_name(SceneKind k);

// Analytic ground-truth scene: an exact SDF plus deterministic shading.
// Primitive SDFs are exact distances; composite scenes combine primitives by
// min, which is a correct distance bound but not exact everywhere inside.
struct AnalyticScene {
  SceneKind kind = SceneKind::Sphere;
  double rod_radius = 0.004;
  Eigen::Vector3d aabb_min = {-0.65, -0.65, -0.65};
  Eigen::Vector3d aabb_max = {0.65, 0.65, 0.65};

  static AnalyticScene make(SceneKind kind);
  static AnalyticScene make(const std::string& name);

  double sdf(const Eigen::Vector3d& x) const;
  Eigen::Vector3d sdf_gradient(const Eigen::Vector3d& x) const;  // analytic per primitive
  Eigen::Vector3d normal(const Eigen::Vector3d& x) const;

  // Procedural sky gradient plus two directional suns; also the miss color.
  Eigen::Vector3d environment(const Eigen::Vector3d& dir) const;
  // Deterministic shading; d is the unit camera->scene direction.
  Eigen::Vector3d shade(const Eigen::Vector3d& x, const Eigen::Vector3d& n, const Eigen::Vector3d& d) const;

  int expected_rod_count() const { return kind == SceneKind::Rods ? 4 : 0; }
};

struct OracleRender {
  int width = 0, height = 0;
  Eigen::MatrixXd rgb;     // [N,3]
  Eigen::VectorXd alpha;   // [N] hit coverage
  Eigen::MatrixXd normal;  // [N,3] zero where no hit
  Eigen::VectorXd depth;   // [N] zero where no hit
};

// Sphere tracing to |f| < 1e-6 (max 256 steps), 2x2 supersampling,
// shadows off. The oracle every desk-scale acceptance test measures against.
OracleRender ground_truth_render(const AnalyticScene& scene, const Camera& cam, int threads = 0);

// Sphere-trace a single ray; returns hit distance or nothing.
std::optional<double> sphere_trace(const AnalyticScene& scene, const Ray& ray, double t_max, int max_steps = 256,
                                   double tol = 1e-6);

struct DatasetFrame {
  std::string file_path;  // as written in the json ("./train/r_0")
  Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();
  Image8 image;
};

// Posed frames in the transforms_{split}.json on-disk layout.
struct SceneDataset {
  std::string root;
  std::string split;  // train | val | test
  double camera_angle_x = 0.6911112;
  int width = 0, height = 0;
  std::vector<DatasetFrame> frames;
  std::optional<Eigen::Vector3d> aabb_min, aabb_max;  // optional scene_aabb extension

  Camera camera(int frame) const;
  int count() const { return static_cast<int>(frames.size()); }
};

struct EmitOptions {
  int n_views = 20;
  int resolution = 64;
  double fov_x = 0.6911112;
  double camera_distance = 2.7;
  std::uint64_t seed = 0;
  bool write_aux = true;  // raw normal/depth dumps for val/test frames
  int threads = 0;
};

// Renders n_views oracle cameras on a sphere (uniform azimuth, two elevation
// rings) and writes PNGs plus transforms_{train,val,test}.json. Returns the
// split sizes actually written.
struct EmitResult {
  int train = 0, val = 0, test = 0;
};
EmitResult emit_dataset(const AnalyticScene& scene, const EmitOptions& opt, const std::string& out_dir);

SceneDataset load_dataset(const std::string& root, const std::string& split);

}  // namespace anisdf
