#include "anisdf/renderer.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "anisdf/parallel.hpp"

namespace anisdf {

void Camera::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("Camera: empty image");
  if (!(fov_x > 0.0 && fov_x < M_PI)) throw std::invalid_argument("Camera: fov out of range");
  const Eigen::Matrix3d R = cam_to_world.block<3, 3>(0, 0);
  if ((R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw std::invalid_argument("Camera: rotation block is not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double fov_x, int width, int height) {
  // camera -z points at the target
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up).normalized();
  if (!right.allFinite() || right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d(0, 1, 0)).normalized();
  const Eigen::Vector3d cam_up = right.cross(forward);
  Camera cam;
  cam.cam_to_world.setIdentity();
  cam.cam_to_world.block<3, 1>(0, 0) = right;
  cam.cam_to_world.block<3, 1>(0, 1) = cam_up;
  cam.cam_to_world.block<3, 1>(0, 2) = -forward;
  cam.cam_to_world.block<3, 1>(0, 3) = eye;
  cam.fov_x = fov_x;
  cam.width = width;
  cam.height = height;
  return cam;
}

Ray generate_ray(const Camera& cam, int px, int py, double ox, double oy) {
  if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
    throw std::out_of_range("generate_ray: pixel outside image");
  const double focal = 0.5 * cam.width / std::tan(0.5 * cam.fov_x);
  const double x = (px + ox - 0.5 * cam.width) / focal;
  const double y = -(py + oy - 0.5 * cam.height) / focal;
  Eigen::Vector3d dir_cam(x, y, -1.0);
  dir_cam.normalize();
  Ray r;
  r.origin = cam.cam_to_world.block<3, 1>(0, 3);
  r.dir = cam.cam_to_world.block<3, 3>(0, 0) * dir_cam;
  return r;
}

std::optional<std::pair<double, double>> intersect_aabb(const Ray& ray, const Eigen::Vector3d& lo,
                                                        const Eigen::Vector3d& hi, double min_near) {
  double tmin = min_near, tmax = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ray.dir[k]) < 1e-12) {
      if (ray.origin[k] < lo[k] || ray.origin[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t0 = (lo[k] - ray.origin[k]) / ray.dir[k];
    double t1 = (hi[k] - ray.origin[k]) / ray.dir[k];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::nullopt;
  }
  return std::make_pair(tmin, tmax);
}

Eigen::VectorXd sample_uniform(double near, double far, int count, Rng* rng) {
  if (!(near < far)) throw std::invalid_argument("sample_uniform: need near < far");
  if (count < 1) throw std::invalid_argument("sample_uniform: need count >= 1");
  Eigen::VectorXd t(count);
  const double span = far - near;
  for (int i = 0; i < count; ++i) {
    const double u = rng ? rng->uniform01() : 0.5;
    t[i] = near + span * (i + u) / count;
  }
  return t;
}

Eigen::VectorXd importance_resample(const Eigen::VectorXd& t, const Eigen::VectorXd& interval_weights, int count,
                                    Rng* rng) {
  const int n = static_cast<int>(t.size());
  if (n < 2) throw std::invalid_argument("importance_resample: need at least two samples");
  if (interval_weights.size() != n - 1) throw std::invalid_argument("importance_resample: weights size must be n-1");
  if (interval_weights.minCoeff() < 0.0) throw std::invalid_argument("importance_resample: negative weight");
  if (count < 1) throw std::invalid_argument("importance_resample: count >= 1");

  Eigen::VectorXd w = interval_weights;
  const double total = w.sum();
  if (total <= 0.0) w.setOnes();  // degenerate; fall back to uniform over intervals
  const double norm = w.sum();

  Eigen::VectorXd cdf(n);
  cdf[0] = 0.0;
  for (int i = 0; i < n - 1; ++i) cdf[i + 1] = cdf[i] + w[i] / norm;
  cdf[n - 1] = 1.0;

  Eigen::VectorXd fresh(count);
  for (int i = 0; i < count; ++i) {
    const double u = (i + (rng ? rng->uniform01() : 0.5)) / count;
    // first interval with cdf[j+1] >= u
    int j = static_cast<int>(std::upper_bound(cdf.data(), cdf.data() + n, u) - cdf.data()) - 1;
    j = std::clamp(j, 0, n - 2);
    const double seg = cdf[j + 1] - cdf[j];
    const double frac = seg > 0.0 ? (u - cdf[j]) / seg : 0.5;
    fresh[i] = t[j] + frac * (t[j + 1] - t[j]);
  }

  Eigen::VectorXd merged(n + count);
  merged.head(n) = t;
  merged.tail(count) = fresh;
  std::sort(merged.data(), merged.data() + merged.size());
  return merged;
}

double sdf_to_alpha(double f_i, double f_next, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("sdf_to_alpha: s must be positive");
  auto phi = [s](double x) {
    const double t = s * x;
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  };
  const double pi = phi(f_i), pn = phi(f_next);
  return std::max((pi - pn) / (pi + 1e-12), 0.0);
}

CompositeResult composite(const Eigen::VectorXd& alphas, const Eigen::MatrixXd& colors) {
  if (alphas.size() != colors.rows()) throw std::invalid_argument("composite: length mismatch");
  CompositeResult res;
  const int n = static_cast<int>(alphas.size());
  res.weights.resize(n);
  res.transmittance.resize(n);
  double T = 1.0;
  for (int i = 0; i < n; ++i) {
    res.transmittance[i] = T;
    res.weights[i] = T * alphas[i];
    T *= std::max(1.0 - alphas[i], 0.0);
  }
  res.color = colors.transpose() * res.weights;
  return res;
}

void RenderModel::register_sharpness(ParameterStore& store, double init_s) {
  Parameter& p = store.create(kSharpnessId, {1, 1});
  p.values[0] = std::log(init_s);
}

double RenderModel::sharpness(const ParameterStore& store) { return std::exp(store.at(kSharpnessId).values[0]); }

namespace {

// Per-ray quadrature distances: stratified uniform plus importance rounds
// driven by no-grad field evaluations at the current parameters.
std::vector<Eigen::VectorXd> plan_samples(const RenderModel& model, const ParameterStore& store,
                                          const std::vector<Ray>& rays, const std::vector<int>& hit_rays,
                                          const std::vector<std::pair<double, double>>& ranges,
                                          const RenderOptions& opt, std::uint64_t seed) {
  const int H = static_cast<int>(hit_rays.size());
  std::vector<Eigen::VectorXd> ts(H);
  for (int h = 0; h < H; ++h) {
    Rng rng(Rng::mix(seed, 0x756e69ull, hit_rays[h]));
    ts[h] = sample_uniform(ranges[h].first, ranges[h].second, opt.n_uniform, opt.stratified ? &rng : nullptr);
  }
  if (opt.n_importance <= 0 || opt.importance_rounds <= 0) return ts;

  const double s = RenderModel::sharpness(store);
  for (int round = 0; round < opt.importance_rounds; ++round) {
    // batched sdf values at all current samples
    int total = 0;
    for (const auto& t : ts) total += static_cast<int>(t.size());
    Eigen::MatrixXd pos(total, 3);
    int at = 0;
    for (int h = 0; h < H; ++h) {
      const Ray& ray = rays[hit_rays[h]];
      for (int i = 0; i < ts[h].size(); ++i) pos.row(at++) = (ray.origin + ts[h][i] * ray.dir).transpose();
    }
    Eigen::VectorXd sdf = model.geometry->sdf_values(store, pos, opt.fine_scale);
    at = 0;
    for (int h = 0; h < H; ++h) {
      const int n = static_cast<int>(ts[h].size());
      Eigen::VectorXd w(n - 1);
      double T = 1.0;
      for (int i = 0; i < n - 1; ++i) {
        const double a = sdf_to_alpha(sdf[at + i], sdf[at + i + 1], s);
        w[i] = T * a;
        T *= std::max(1.0 - a, 0.0);
      }
      at += n;
      Rng rng(Rng::mix(seed, 0x696d70ull + round, hit_rays[h]));
      ts[h] = importance_resample(ts[h], w, opt.n_importance, opt.stratified ? &rng : nullptr);
    }
  }
  return ts;
}

}  // namespace

BatchRender render_rays(ad::Tape& tape, const RenderModel& model, const std::vector<Ray>& rays,
                        const RenderOptions& opt, std::uint64_t sample_seed) {
  const ParameterStore& store = *tape.store();
  const GridConfig& gc = model.grid->config();

  BatchRender out;
  out.miss.assign(rays.size(), 1);
  std::vector<std::pair<double, double>> ranges;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    auto hit = intersect_aabb(rays[i], gc.aabb_min, gc.aabb_max, opt.min_near);
    if (hit && hit->second - hit->first > 1e-6) {
      out.miss[i] = 0;
      out.hit_rays.push_back(static_cast<int>(i));
      ranges.push_back(*hit);
    }
  }
  const int H = static_cast<int>(out.hit_rays.size());
  if (H == 0) return out;

  std::vector<Eigen::VectorXd> ts = plan_samples(model, store, rays, out.hit_rays, ranges, opt, sample_seed);

  // flatten
  int S = 0;
  for (const auto& t : ts) S += static_cast<int>(t.size());
  const int P = S - H;
  out.sample_offsets.resize(H + 1);
  out.pair_offsets.resize(H + 1);
  Eigen::MatrixXd pos(S, 3), dirs(S, 3);
  out.pair_t.resize(P);
  std::vector<int> lo_idx(P), hi_idx(P);
  Eigen::MatrixXd pair_pos(P, 3), pair_dirs(P, 3);
  {
    int s_at = 0, p_at = 0;
    for (int h = 0; h < H; ++h) {
      out.sample_offsets[h] = s_at;
      out.pair_offsets[h] = p_at;
      const Ray& ray = rays[out.hit_rays[h]];
      const int n = static_cast<int>(ts[h].size());
      for (int i = 0; i < n; ++i) {
        pos.row(s_at + i) = (ray.origin + ts[h][i] * ray.dir).transpose();
        dirs.row(s_at + i) = ray.dir.transpose();
      }
      for (int i = 0; i < n - 1; ++i) {
        lo_idx[p_at + i] = s_at + i;
        hi_idx[p_at + i] = s_at + i + 1;
        out.pair_t[p_at + i] = ts[h][i];
        pair_pos.row(p_at + i) = pos.row(s_at + i);
        pair_dirs.row(p_at + i) = dirs.row(s_at + i);
      }
      s_at += n;
      p_at += n - 1;
    }
    out.sample_offsets[H] = s_at;
    out.pair_offsets[H] = p_at;
  }
  out.sample_pos = pos;
  out.sample_dirs = dirs;
  out.pair_pos = pair_pos;
  out.pair_dirs = pair_dirs;

  // geometry at all samples, appearance at interval heads
  GeometryField::BatchEval geo = model.geometry->eval(tape, pos, true, opt.fine_scale);
  ad::Var n_pairs = ad::gather_rows(geo.normal, lo_idx);
  ad::Var f_pairs = ad::gather_rows(geo.feature, lo_idx);
  Appearance::Eval app = model.appearance->eval(tape, pair_pos, pair_dirs, n_pairs, f_pairs);

  // alpha_i = relu((phi_i - phi_{i+1}) / phi_i), phi = sigmoid(s * f)
  ad::Var s_var = ad::exp(tape.param(RenderModel::kSharpnessId));
  ad::Var phi = ad::sigmoid(ad::bscale(geo.sdf, s_var));
  ad::Var phi_lo = ad::gather_rows(phi, lo_idx);
  ad::Var phi_hi = ad::gather_rows(phi, hi_idx);
  out.alphas = ad::relu(ad::div_guarded(ad::sub(phi_lo, phi_hi), phi_lo, 1e-12));
  out.weights = ad::composite_weights(out.alphas, out.pair_offsets);

  ad::Var fg = ad::segment_sum(ad::colwise_scale(app.color, out.weights), out.pair_offsets);
  out.opacity = ad::segment_sum(out.weights, out.pair_offsets);
  ad::Var bg_share = ad::add_const(ad::neg(out.opacity), 1.0);  // [H,1]

  if (opt.per_sample_blend) {
    out.color = ad::add(fg, ad::matmul(bg_share, tape.constant(opt.background.transpose())));
  } else {
    // pixel-level blend: composite each field, mix by the weight expectation
    ad::Var cv = ad::segment_sum(ad::colwise_scale(app.c_view, out.weights), out.pair_offsets);
    ad::Var cr = ad::segment_sum(ad::colwise_scale(app.c_ref, out.weights), out.pair_offsets);
    ad::Var w_pix = ad::div_guarded(ad::segment_sum(ad::mul(app.w, out.weights), out.pair_offsets), out.opacity, 1e-9);
    ad::Var one_minus = ad::add_const(ad::neg(w_pix), 1.0);
    ad::Var mixed = ad::add(ad::colwise_scale(cv, w_pix), ad::colwise_scale(cr, one_minus));
    out.color = ad::add(mixed, ad::matmul(bg_share, tape.constant(opt.background.transpose())));
  }

  out.normals = n_pairs;
  out.blend_w = app.w;
  out.sample_colors = app.color;
  out.c_view = app.c_view;
  out.c_ref = app.c_ref;
  return out;
}

RaySampleSet render_ray_detail(const ParameterStore& store, const RenderModel& model, const Ray& ray,
                               const RenderOptions& opt, std::uint64_t seed) {
  RaySampleSet rec;
  rec.ray = ray;
  ad::Tape tape(&store, false);
  BatchRender br = render_rays(tape, model, {ray}, opt, seed);
  if (br.hit_rays.empty()) return rec;
  rec.hit_aabb = true;
  const int S = br.n_samples();
  const int P = S - 1;
  rec.t.resize(S);
  for (int i = 0; i < P; ++i) rec.t[i] = br.pair_t[i];
  // recover the final sample distance from its position
  rec.t[S - 1] = (br.sample_pos.row(S - 1).transpose() - ray.origin).norm();
  rec.delta.resize(S);
  rec.delta[0] = 0.0;
  for (int i = 1; i < S; ++i) rec.delta[i] = rec.t[i] - rec.t[i - 1];
  ad::Tape probe(&store, false);
  rec.sdf = model.geometry->eval(probe, br.sample_pos, false, opt.fine_scale).sdf.value().col(0);
  rec.alpha = br.alphas.value().col(0);
  rec.w = br.weights.value().col(0);
  rec.T.resize(P);
  double T = 1.0;
  for (int i = 0; i < P; ++i) {
    rec.T[i] = T;
    T *= std::max(1.0 - rec.alpha[i], 0.0);
  }
  rec.color = br.sample_colors.value();
  rec.c_view = br.c_view.value();
  rec.c_ref = br.c_ref.value();
  rec.normal = br.normals.value();
  rec.blend_w = br.blend_w.value().col(0);
  return rec;
}

RenderOutput render_pixel(const ParameterStore& store, const RenderModel& model, const Camera& cam, int px, int py,
                          const RenderOptions& opt, std::uint64_t seed) {
  Ray ray = generate_ray(cam, px, py);
  ad::Tape tape(&store, false);
  BatchRender br = render_rays(tape, model, {ray}, opt, Rng::mix(seed, py, px));
  RenderOutput out;
  out.color = opt.background;
  if (br.hit_rays.empty()) return out;
  out.color = br.color.value().row(0);
  const Eigen::VectorXd w = br.weights.value().col(0);
  out.opacity = w.sum();
  out.depth = w.dot(br.pair_t);
  Eigen::Vector3d n = br.normals.value().transpose() * w;
  out.normal = n.norm() > 1e-9 ? n.normalized() : Eigen::Vector3d::Zero();
  const double wsum = std::max(out.opacity, 1e-9);
  out.mean_blend_w = br.blend_w.value().col(0).dot(w) / wsum;
  if (out.opacity < 1e-6) out.mean_blend_w = 0.5;
  return out;
}

ImageBuffers render_image(const ParameterStore& store, const RenderModel& model, const Camera& cam,
                          const RenderOptions& opt, std::uint64_t seed, int threads) {
  ImageBuffers img;
  img.width = cam.width;
  img.height = cam.height;
  const int n = cam.width * cam.height;
  img.rgb.resize(n, 3);
  img.depth = Eigen::VectorXd::Zero(n);
  img.opacity = Eigen::VectorXd::Zero(n);
  img.normal = Eigen::MatrixXd::Zero(n, 3);
  img.blend_w = Eigen::VectorXd::Constant(n, 0.5);

  parallel_for(cam.height, [&](int y) {
    std::vector<Ray> rays;
    rays.reserve(cam.width);
    for (int x = 0; x < cam.width; ++x) rays.push_back(generate_ray(cam, x, y));
    ad::Tape tape(&store, false);
    BatchRender br = render_rays(tape, model, rays, opt, Rng::mix(seed, 0x726f77ull, y));
    for (int x = 0; x < cam.width; ++x) img.rgb.row(y * cam.width + x) = opt.background.transpose();
    if (br.hit_rays.empty()) return;
    const Eigen::MatrixXd color = br.color.value();
    const Eigen::VectorXd w = br.weights.value().col(0);
    const Eigen::MatrixXd nrm = br.normals.value();
    const Eigen::VectorXd bw = br.blend_w.value().col(0);
    for (int h = 0; h < static_cast<int>(br.hit_rays.size()); ++h) {
      const int pix = y * cam.width + br.hit_rays[h];
      img.rgb.row(pix) = color.row(h);
      double opacity = 0.0, depth = 0.0, wb = 0.0;
      Eigen::Vector3d en = Eigen::Vector3d::Zero();
      for (int i = br.pair_offsets[h]; i < br.pair_offsets[h + 1]; ++i) {
        opacity += w[i];
        depth += w[i] * br.pair_t[i];
        wb += w[i] * bw[i];
        en += w[i] * nrm.row(i).transpose();
      }
      img.opacity[pix] = opacity;
      img.depth[pix] = depth;
      if (en.norm() > 1e-9) img.normal.row(pix) = en.normalized().transpose();
      img.blend_w[pix] = opacity > 1e-6 ? wb / std::max(opacity, 1e-9) : 0.5;
    }
  }, threads);
  return img;
}

}  // namespace anisdf
