#include "anisdf/scenegen.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "anisdf/parallel.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

SceneKind scene_kind_from_name(const std::string& name) {
  if (name == "sphere") return SceneKind::Sphere;
  if (name == "torus") return SceneKind::Torus;
  if (name == "rods") return SceneKind::Rods;
  if (name == "mirror-sphere" || name == "mirror_sphere") return SceneKind::MirrorSphere;
  if (name == "composite") return SceneKind::Composite;
  throw std::invalid_argument("unknown scene kind: " + name);
}

const char* scene_kind_name(SceneKind k) {
  switch (k) {
    case SceneKind::Sphere: return "sphere";
    case SceneKind::Torus: return "torus";
    case SceneKind::Rods: return "rods";
    case SceneKind::MirrorSphere: return "mirror-sphere";
    case SceneKind::Composite: return "composite";
  }
  return "?";
}

namespace {

constexpr double kSphereRadius = 0.5;
constexpr double kTorusMajor = 0.4;
constexpr double kTorusMinor = 0.1;
constexpr double kRodsSphereRadius = 0.25;
constexpr double kRodHalfLength = 0.5;
constexpr double kCompositeTorusMajor = 0.45;
constexpr double kCompositeTorusMinor = 0.08;
constexpr double kCompositeSphereRadius = 0.28;

double sphere_sdf(const Eigen::Vector3d& x, double r) { return x.norm() - r; }

Eigen::Vector3d sphere_grad(const Eigen::Vector3d& x) {
  const double n = x.norm();
  return n > 1e-12 ? Eigen::Vector3d(x / n) : Eigen::Vector3d(0, 0, 1);
}

double torus_sdf(const Eigen::Vector3d& x, double R, double r) {
  const double q = std::hypot(x.x(), x.y()) - R;
  return std::hypot(q, x.z()) - r;
}

Eigen::Vector3d torus_grad(const Eigen::Vector3d& x, double R, double r) {
  const double rho = std::hypot(x.x(), x.y());
  const double q = rho - R;
  const double m = std::hypot(q, x.z());
  if (m < 1e-12 || rho < 1e-12) return {0, 0, 1};
  Eigen::Vector3d g;
  g.x() = q * x.x() / (rho * m);
  g.y() = q * x.y() / (rho * m);
  g.z() = x.z() / m;
  return g;
}

// Vertical capsule: segment z in [-h, h] at (cx, cy), radius r.
double capsule_sdf(const Eigen::Vector3d& x, double cx, double cy, double h, double r) {
  const double dz = std::clamp(x.z(), -h, h);
  return std::sqrt((x.x() - cx) * (x.x() - cx) + (x.y() - cy) * (x.y() - cy) + (x.z() - dz) * (x.z() - dz)) - r;
}

Eigen::Vector3d capsule_grad(const Eigen::Vector3d& x, double cx, double cy, double h) {
  const double dz = std::clamp(x.z(), -h, h);
  Eigen::Vector3d v(x.x() - cx, x.y() - cy, x.z() - dz);
  const double n = v.norm();
  return n > 1e-12 ? Eigen::Vector3d(v / n) : Eigen::Vector3d(1, 0, 0);
}

const std::array<std::pair<double, double>, 4> kRodCenters = {
    {{0.45, 0.0}, {-0.45, 0.0}, {0.0, 0.45}, {0.0, -0.45}}};

Eigen::Vector3d albedo(const Eigen::Vector3d& x) {
  return {0.55 + 0.35 * std::sin(4.0 * x.x()), 0.55 + 0.35 * std::sin(4.0 * x.y() + 2.0),
          0.55 + 0.35 * std::sin(4.0 * x.z() + 4.0)};
}

Eigen::Vector3d clamp01(Eigen::Vector3d v) {
  for (int k = 0; k < 3; ++k) v[k] = std::clamp(v[k], 0.0, 1.0);
  return v;
}

Eigen::Vector3d lambertian(const Eigen::Vector3d& x, const Eigen::Vector3d& n) {
  static const Eigen::Vector3d l1 = Eigen::Vector3d(1.0, 0.6, 0.8).normalized();
  static const Eigen::Vector3d c1 = 0.75 * Eigen::Vector3d(1.0, 0.95, 0.85);
  static const Eigen::Vector3d l2 = Eigen::Vector3d(-0.7, -0.3, 0.5).normalized();
  static const Eigen::Vector3d c2 = 0.35 * Eigen::Vector3d(0.7, 0.8, 1.0);
  const Eigen::Vector3d a = albedo(x);
  Eigen::Vector3d light = Eigen::Vector3d::Constant(0.25);
  light += std::max(0.0, n.dot(l1)) * c1;
  light += std::max(0.0, n.dot(l2)) * c2;
  return clamp01(a.cwiseProduct(light));
}

}  // namespace

AnalyticScene AnalyticScene::make(SceneKind kind) {
  AnalyticScene s;
  s.kind = kind;
  return s;
}

AnalyticScene AnalyticScene::make(const std::string& name) { return make(scene_kind_from_name(name)); }

double AnalyticScene::sdf(const Eigen::Vector3d& x) const {
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::MirrorSphere: return sphere_sdf(x, kSphereRadius);
    case SceneKind::Torus: return torus_sdf(x, kTorusMajor, kTorusMinor);
    case SceneKind::Rods: {
      double d = sphere_sdf(x, kRodsSphereRadius);
      for (const auto& [cx, cy] : kRodCenters) d = std::min(d, capsule_sdf(x, cx, cy, kRodHalfLength, rod_radius));
      return d;
    }
    case SceneKind::Composite: {
      const double t = torus_sdf(x, kCompositeTorusMajor, kCompositeTorusMinor);
      return std::min(t, sphere_sdf(x, kCompositeSphereRadius));
    }
  }
  throw std::logic_error("bad scene kind");
}

Eigen::Vector3d AnalyticScene::sdf_gradient(const Eigen::Vector3d& x) const {
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::MirrorSphere: return sphere_grad(x);
    case SceneKind::Torus: return torus_grad(x, kTorusMajor, kTorusMinor);
    case SceneKind::Rods: {
      double best = sphere_sdf(x, kRodsSphereRadius);
      int which = -1;
      for (int i = 0; i < 4; ++i) {
        const double d = capsule_sdf(x, kRodCenters[i].first, kRodCenters[i].second, kRodHalfLength, rod_radius);
        if (d < best) {
          best = d;
          which = i;
        }
      }
      if (which < 0) return sphere_grad(x);
      return capsule_grad(x, kRodCenters[which].first, kRodCenters[which].second, kRodHalfLength);
    }
    case SceneKind::Composite: {
      const double t = torus_sdf(x, kCompositeTorusMajor, kCompositeTorusMinor);
      const double s = sphere_sdf(x, kCompositeSphereRadius);
      return s < t ? sphere_grad(x) : torus_grad(x, kCompositeTorusMajor, kCompositeTorusMinor);
    }
  }
  throw std::logic_error("bad scene kind");
}

Eigen::Vector3d AnalyticScene::normal(const Eigen::Vector3d& x) const {
  Eigen::Vector3d g = sdf_gradient(x);
  const double n = g.norm();
  return n > 1e-12 ? Eigen::Vector3d(g / n) : Eigen::Vector3d(0, 0, 1);
}

Eigen::Vector3d AnalyticScene::environment(const Eigen::Vector3d& dir) const {
  static const Eigen::Vector3d horizon(0.75, 0.80, 0.90);
  static const Eigen::Vector3d zenith(0.20, 0.35, 0.65);
  static const Eigen::Vector3d sun1_dir = Eigen::Vector3d(0.5, 0.3, 0.8).normalized();
  static const Eigen::Vector3d sun1_col(1.2, 1.1, 0.9);
  static const Eigen::Vector3d sun2_dir = Eigen::Vector3d(-0.6, -0.7, 0.2).normalized();
  static const Eigen::Vector3d sun2_col(0.55, 0.35, 0.25);
  const double h = 0.5 * (dir.z() + 1.0);
  Eigen::Vector3d c = (1.0 - h) * horizon + h * zenith;
  c += sun1_col * std::exp((dir.dot(sun1_dir) - 1.0) / 0.03);
  c += sun2_col * std::exp((dir.dot(sun2_dir) - 1.0) / 0.10);
  return clamp01(c);
}

Eigen::Vector3d AnalyticScene::shade(const Eigen::Vector3d& x, const Eigen::Vector3d& n,
                                     const Eigen::Vector3d& d) const {
  switch (kind) {
    case SceneKind::Sphere:
    case SceneKind::Torus:
    case SceneKind::Rods: return lambertian(x, n);
    case SceneKind::MirrorSphere: return environment(reflect(d, n));
    case SceneKind::Composite: {
      // the inner sphere is half mirror, the torus diffuse
      const double s = sphere_sdf(x, kCompositeSphereRadius);
      const double t = torus_sdf(x, kCompositeTorusMajor, kCompositeTorusMinor);
      if (s < t) return clamp01(0.5 * lambertian(x, n) + 0.5 * environment(reflect(d, n)));
      return lambertian(x, n);
    }
  }
  throw std::logic_error("bad scene kind");
}

std::optional<double> sphere_trace(const AnalyticScene& scene, const Ray& ray, double t_max, int max_steps,
                                   double tol) {
  auto range = intersect_aabb(ray, scene.aabb_min, scene.aabb_max, 0.0);
  if (!range) return std::nullopt;
  double t = range->first;
  const double far = std::min(range->second, t_max);
  for (int i = 0; i < max_steps && t <= far; ++i) {
    const double f = scene.sdf(ray.origin + t * ray.dir);
    if (std::abs(f) < tol) return t;
    t += f;
  }
  return std::nullopt;
}

OracleRender ground_truth_render(const AnalyticScene& scene, const Camera& cam, int threads) {
  cam.validate();
  OracleRender out;
  out.width = cam.width;
  out.height = cam.height;
  const int n = cam.width * cam.height;
  out.rgb.resize(n, 3);
  out.alpha = Eigen::VectorXd::Zero(n);
  out.normal = Eigen::MatrixXd::Zero(n, 3);
  out.depth = Eigen::VectorXd::Zero(n);

  constexpr double kOffsets[2] = {0.25, 0.75};
  parallel_for(cam.height, [&](int y) {
    for (int x = 0; x < cam.width; ++x) {
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      Eigen::Vector3d nrm = Eigen::Vector3d::Zero();
      double alpha = 0.0, depth = 0.0;
      int hits = 0;
      for (double ox : kOffsets)
        for (double oy : kOffsets) {
          const Ray ray = generate_ray(cam, x, y, ox, oy);
          auto t = sphere_trace(scene, ray, 1e3);
          if (t) {
            const Eigen::Vector3d p = ray.origin + *t * ray.dir;
            const Eigen::Vector3d sn = scene.normal(p);
            color += scene.shade(p, sn, ray.dir);
            nrm += sn;
            depth += *t;
            alpha += 1.0;
            ++hits;
          } else {
            color += scene.environment(ray.dir);
          }
        }
      const int pix = y * cam.width + x;
      out.rgb.row(pix) = (color / 4.0).transpose();
      out.alpha[pix] = alpha / 4.0;
      if (hits > 0) {
        out.depth[pix] = depth / hits;
        if (nrm.norm() > 1e-9) out.normal.row(pix) = nrm.normalized().transpose();
      }
    }
  }, threads);
  return out;
}

Camera SceneDataset::camera(int frame) const {
  Camera cam;
  cam.cam_to_world = frames.at(frame).cam_to_world;
  cam.fov_x = camera_angle_x;
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

namespace {

Camera orbit_camera(int i, int n, double distance, double fov_x, int res) {
  // uniform azimuth, alternating elevation rings
  const double az = 2.0 * M_PI * i / n;
  const double el = (i % 2 == 0) ? 20.0 * M_PI / 180.0 : 45.0 * M_PI / 180.0;
  const Eigen::Vector3d eye(distance * std::cos(el) * std::cos(az), distance * std::cos(el) * std::sin(az),
                            distance * std::sin(el));
  return Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1), fov_x, res, res);
}

ordered_json matrix_to_json(const Eigen::Matrix4d& m) {
  ordered_json rows = ordered_json::array();
  for (int r = 0; r < 4; ++r) {
    ordered_json row = ordered_json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix4d matrix_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("transform_matrix must be a 4x4 array");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw IoError("transform_matrix must be a 4x4 array");
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

EmitResult emit_dataset(const AnalyticScene& scene, const EmitOptions& opt, const std::string& out_dir) {
  if (opt.n_views < 1) throw std::invalid_argument("emit_dataset: n_views must be >= 1");
  if (opt.resolution < 2) throw std::invalid_argument("emit_dataset: resolution too small");

  const int holdout = std::max(1, static_cast<int>(std::lround(opt.n_views * 0.1)));
  EmitResult split;
  split.val = opt.n_views > 2 ? holdout : 0;
  split.test = opt.n_views > 1 ? holdout : 0;
  split.train = opt.n_views - split.val - split.test;
  if (split.train < 1) {
    split.train = opt.n_views;
    split.val = split.test = 0;
  }

  std::vector<int> order(opt.n_views);
  for (int i = 0; i < opt.n_views; ++i) order[i] = i;
  Rng rng(Rng::mix(opt.seed, 0x73706c6974ull));
  rng.shuffle(order);

  struct SplitSpec {
    const char* name;
    int from, count;
  };
  const SplitSpec specs[3] = {{"train", 0, split.train},
                              {"val", split.train, split.val},
                              {"test", split.train + split.val, split.test}};

  fs::create_directories(out_dir);
  for (const SplitSpec& sp : specs) {
    if (sp.count == 0) continue;
    fs::create_directories(fs::path(out_dir) / sp.name);
    ordered_json root;
    root["camera_angle_x"] = opt.fov_x;
    root["scene_kind"] = scene_kind_name(scene.kind);
    root["scene_aabb"] = {scene.aabb_min.x(), scene.aabb_min.y(), scene.aabb_min.z(),
                          scene.aabb_max.x(), scene.aabb_max.y(), scene.aabb_max.z()};
    ordered_json frames = ordered_json::array();
    for (int k = 0; k < sp.count; ++k) {
      const int view = order[sp.from + k];
      const Camera cam = orbit_camera(view, opt.n_views, opt.camera_distance, opt.fov_x, opt.resolution);
      OracleRender img = ground_truth_render(scene, cam, opt.threads);
      const std::string rel = std::string(sp.name) + "/r_" + std::to_string(k);
      write_png((fs::path(out_dir) / (rel + ".png")).string(),
                Image8::from_float(img.rgb, &img.alpha, img.width, img.height));
      if (opt.write_aux && std::string(sp.name) != "train") {
        write_raw32((fs::path(out_dir) / (rel + "_normal.bin")).string(), img.normal, img.width, img.height, 3);
        write_raw32((fs::path(out_dir) / (rel + "_depth.bin")).string(), img.depth, img.width, img.height, 1);
      }
      ordered_json frame;
      frame["file_path"] = "./" + rel;
      frame["transform_matrix"] = matrix_to_json(cam.cam_to_world);
      frames.push_back(frame);
    }
    root["frames"] = frames;
    std::ofstream out(fs::path(out_dir) / ("transforms_" + std::string(sp.name) + ".json"));
    if (!out) throw IoError("emit_dataset: cannot write transforms json in " + out_dir);
    out << root.dump(2) << "\n";
  }
  return split;
}

SceneDataset load_dataset(const std::string& root, const std::string& split) {
  SceneDataset ds;
  ds.root = root;
  ds.split = split;
  const fs::path jpath = fs::path(root) / ("transforms_" + split + ".json");
  std::ifstream in(jpath);
  if (!in) throw IoError("load_dataset: missing " + jpath.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("load_dataset: malformed json " + jpath.string() + ": " + e.what());
  }
  if (!j.contains("camera_angle_x") || !j.contains("frames"))
    throw IoError("load_dataset: " + jpath.string() + " lacks camera_angle_x/frames");
  ds.camera_angle_x = j["camera_angle_x"].get<double>();
  if (j.contains("scene_aabb")) {
    const auto& a = j["scene_aabb"];
    if (a.size() == 6) {
      ds.aabb_min = Eigen::Vector3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
      ds.aabb_max = Eigen::Vector3d(a[3].get<double>(), a[4].get<double>(), a[5].get<double>());
    }
  }
  for (const auto& f : j["frames"]) {
    DatasetFrame frame;
    frame.file_path = f.at("file_path").get<std::string>();
    frame.cam_to_world = matrix_from_json(f.at("transform_matrix"));
    fs::path img = fs::path(root) / (frame.file_path + ".png");
    if (!fs::exists(img)) {
      // some exports keep the extension in file_path
      img = fs::path(root) / frame.file_path;
      if (!fs::exists(img)) throw IoError("load_dataset: missing image " + img.string());
    }
    frame.image = read_png(img.string());
    if (ds.width == 0) {
      ds.width = frame.image.width;
      ds.height = frame.image.height;
    } else if (frame.image.width != ds.width || frame.image.height != ds.height) {
      throw IoError("load_dataset: image size mismatch at " + img.string());
    }
    ds.frames.push_back(std::move(frame));
  }
  for (int i = 0; i < ds.count(); ++i) ds.camera(i);  // validates rotations
  return ds;
}

}  // namespace anisdf
