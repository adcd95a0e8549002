#include "anisdf/trainer.hpp"

#include <Eigen/Geometry>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "anisdf/evalkit.hpp"
#include "anisdf/parallel.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

namespace fs = std::filesystem;

namespace {

// integer box-filter downscale of a composited float image
Eigen::MatrixXd downscale(const Eigen::MatrixXd& rgb, int w, int h, int factor, int* out_w, int* out_h) {
  const int nw = w / factor, nh = h / factor;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(nw) * nh, 3);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += rgb.row((y * factor + dy) * w + (x * factor + dx)).transpose();
      out.row(y * nw + x) = (acc / (factor * factor)).transpose();
    }
  *out_w = nw;
  *out_h = nh;
  return out;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg) : Trainer(std::move(cfg), true) {}

Trainer::Trainer(TrainConfig cfg, bool fresh_params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  load_data();
  build_modules();
  if (fresh_params) init_params();
}

void Trainer::build_modules() {
  grid_ = std::make_unique<HashGrid>(cfg_.grid);
  GeometryConfig gcfg = cfg_.geometry;
  cfg_.appearance.feature_dim = gcfg.feature_dim;
  geometry_ = std::make_unique<GeometryField>(grid_.get(), gcfg);
  appearance_ = std::make_unique<Appearance>(grid_.get(), cfg_.appearance);
}

void Trainer::init_params() {
  Rng rng(Rng::mix(cfg_.seed, 0x696e6974ull));
  grid_->register_params(store_, rng);
  geometry_->register_params(store_, rng);
  appearance_->register_params(store_, rng);
  RenderModel::register_sharpness(store_, cfg_.init_sharpness);
}

void Trainer::load_data() {
  SceneDataset ds = load_dataset(cfg_.dataset_dir, "train");
  if (ds.count() == 0) throw TrainerError("trainer: empty train split in " + cfg_.dataset_dir);
  if (ds.aabb_min && ds.aabb_max) {
    cfg_.grid.aabb_min = *ds.aabb_min;
    cfg_.grid.aabb_max = *ds.aabb_max;
  }
  n_frames_ = ds.count();
  for (int i = 0; i < n_frames_; ++i) {
    Eigen::MatrixXd rgb = ds.frames[i].image.composite_over(cfg_.render.background);
    int w = ds.width, h = ds.height;
    if (cfg_.image_downscale > 1) rgb = downscale(rgb, ds.width, ds.height, cfg_.image_downscale, &w, &h);
    img_w_ = w;
    img_h_ = h;
    gt_images_.push_back(std::move(rgb));
    Camera cam = ds.camera(i);
    cam.width = w;
    cam.height = h;
    cameras_.push_back(cam);
  }
}

RenderModel Trainer::model() const {
  RenderModel m;
  m.grid = grid_.get();
  m.geometry = geometry_.get();
  m.appearance = appearance_.get();
  return m;
}

double Trainer::fine_scale_at(int step) const {
  if (!cfg_.fine_enabled) return 0.0;
  if (cfg_.fine_warmup_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / cfg_.fine_warmup_steps);
}

double Trainer::curvature_weight_at(int step) const {
  const bool early = step < cfg_.curvature_boost_frac * cfg_.total_steps;
  return cfg_.loss.curvature * (early ? cfg_.curvature_boost : 1.0);
}

double Trainer::learning_rate_at(int step) const {
  const double t = cfg_.total_steps > 1 ? static_cast<double>(step) / (cfg_.total_steps - 1) : 1.0;
  return cfg_.learning_rate * std::pow(cfg_.learning_rate_final / cfg_.learning_rate, t);
}

RenderOptions Trainer::train_render_options() const {
  RenderOptions opt = cfg_.render;
  opt.fine_scale = fine_scale_at(step_);
  return opt;
}

RenderOptions Trainer::eval_render_options() const {
  RenderOptions opt = cfg_.render;
  opt.stratified = false;
  opt.fine_scale = fine_scale_at(std::max(step_ - 1, 0));
  return opt;
}

const Eigen::VectorXi& Trainer::epoch_permutation(int epoch) const {
  auto it = perm_cache_.find(epoch);
  if (it != perm_cache_.end()) return it->second;
  const int total = train_pixel_count();
  Eigen::VectorXi perm(total);
  for (int i = 0; i < total; ++i) perm[i] = i;
  Rng rng(Rng::mix(cfg_.seed, 0x7065726dull, static_cast<std::uint64_t>(epoch)));
  for (int i = total - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  if (perm_cache_.size() > 2) perm_cache_.erase(perm_cache_.begin());
  return perm_cache_.emplace(epoch, std::move(perm)).first->second;
}

Trainer::PixelBatch Trainer::make_batch(int step) const {
  const int total = train_pixel_count();
  const int B = cfg_.rays_per_batch;
  PixelBatch batch;
  batch.rays.reserve(B);
  batch.gt.resize(B, 3);
  const std::int64_t start = static_cast<std::int64_t>(step) * B;
  for (int k = 0; k < B; ++k) {
    const std::int64_t g = start + k;
    const int epoch = static_cast<int>(g / total);
    const int at = static_cast<int>(g % total);
    const int pixel = epoch_permutation(epoch)[at];
    const int frame = pixel / (img_w_ * img_h_);
    const int within = pixel % (img_w_ * img_h_);
    const int py = within / img_w_;
    const int px = within % img_w_;
    batch.rays.push_back(generate_ray(cameras_[frame], px, py));
    batch.gt.row(k) = gt_images_[frame].row(within);
  }
  return batch;
}

struct Trainer::StepPieces {
  double rgb_sum = 0.0;
  double orient_sum = 0.0;
  double entropy_sum = 0.0;
  std::map<std::string, Eigen::VectorXd> grads;
  Eigen::MatrixXd surface_pool;  // pair positions for near-surface regularizer points
};

LossReport Trainer::train_step() {
  const int current = step_;
  const double fine_scale = fine_scale_at(current);
  const double lambda_curv = curvature_weight_at(current);
  const int B = cfg_.rays_per_batch;

  PixelBatch batch = make_batch(current);
  RenderOptions opt = cfg_.render;
  opt.fine_scale = fine_scale;

  // fixed partition of the batch; the worker count never affects results
  const int n_chunks = std::min(cfg_.n_chunks, B);
  std::vector<std::pair<int, int>> spans(n_chunks);
  for (int c = 0; c < n_chunks; ++c) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(B) * c / n_chunks);
    const int hi = static_cast<int>(static_cast<std::int64_t>(B) * (c + 1) / n_chunks);
    spans[c] = {lo, hi};
  }

  // total interval count, needed for the alpha-entropy normalization
  const int samples_per_ray = opt.n_uniform + opt.importance_rounds * opt.n_importance;
  int hit_total = 0;
  std::vector<double> miss_rgb(n_chunks, 0.0);
  for (int c = 0; c < n_chunks; ++c)
    for (int r = spans[c].first; r < spans[c].second; ++r) {
      auto range = intersect_aabb(batch.rays[r], cfg_.grid.aabb_min, cfg_.grid.aabb_max, opt.min_near);
      if (range && range->second - range->first > 1e-6)
        ++hit_total;
      else
        miss_rgb[c] += (cfg_.render.background.transpose() - batch.gt.row(r)).squaredNorm();
    }
  const int pair_total = std::max(hit_total * (samples_per_ray - 1), 1);

  std::vector<StepPieces> pieces(n_chunks);
  RenderModel mdl = model();
  parallel_for(n_chunks, [&](int c) {
    StepPieces& out = pieces[c];
    std::vector<Ray> rays(batch.rays.begin() + spans[c].first, batch.rays.begin() + spans[c].second);
    ad::Tape tape(&store_, true);
    BatchRender br =
        render_rays(tape, mdl, rays, opt, Rng::mix(cfg_.seed, 0x72656e64ull + current, spans[c].first));
    if (br.hit_rays.empty()) return;

    Eigen::MatrixXd gt_hit(br.hit_rays.size(), 3);
    for (std::size_t i = 0; i < br.hit_rays.size(); ++i)
      gt_hit.row(static_cast<Eigen::Index>(i)) = batch.gt.row(spans[c].first + br.hit_rays[i]);

    ad::Var rgb_sum = ad::sum(ad::square(ad::sub(br.color, tape.constant(gt_hit))));
    ad::Var facing = ad::rowwise_dot(br.normals, tape.constant(br.pair_dirs));
    ad::Var orient_sum = ad::sum(ad::mul(br.weights, ad::square(ad::relu(facing))));
    ad::Var one_minus = ad::add_const(ad::neg(br.alphas), 1.0);
    ad::Var entropy_sum = ad::neg(ad::sum(ad::add(ad::mul(br.alphas, ad::log_clamped(br.alphas, 1e-7)),
                                                  ad::mul(one_minus, ad::log_clamped(one_minus, 1e-7)))));

    ad::Var chunk_obj = ad::scale(rgb_sum, 1.0 / B);
    chunk_obj = ad::add(chunk_obj, ad::scale(orient_sum, cfg_.loss.orientation / B));
    chunk_obj = ad::add(chunk_obj, ad::scale(entropy_sum, cfg_.loss.alpha / pair_total));
    tape.backward(chunk_obj);

    out.rgb_sum = rgb_sum.scalar();
    out.orient_sum = orient_sum.scalar();
    out.entropy_sum = entropy_sum.scalar();
    for (const auto& [id, node] : tape.param_nodes()) {
      const ad::Mat g = tape.param_grad(id);
      out.grads[id] = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    }
    out.surface_pool = br.pair_pos;
  });

  // eikonal + curvature regularizer pass over dedicated points
  double eik_value = 0.0, curv_value = 0.0;
  std::map<std::string, Eigen::VectorXd> reg_grads;
  {
    const int n_pts = cfg_.eikonal_points;
    const int n_near = n_pts / 2;
    const int n_uni = n_pts - n_near;
    Eigen::MatrixXd pts(n_pts, 3);
    Rng rng(Rng::mix(cfg_.seed, 0x65696bull, current));
    for (int i = 0; i < n_uni; ++i)
      for (int k = 0; k < 3; ++k) pts(i, k) = rng.uniform(cfg_.grid.aabb_min[k], cfg_.grid.aabb_max[k]);
    int pool_rows = 0;
    for (const auto& p : pieces) pool_rows += static_cast<int>(p.surface_pool.rows());
    for (int i = 0; i < n_near; ++i) {
      Eigen::Vector3d base;
      if (pool_rows > 0) {
        int pick = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(pool_rows));
        for (const auto& p : pieces) {
          if (pick < p.surface_pool.rows()) {
            base = p.surface_pool.row(pick).transpose();
            break;
          }
          pick -= static_cast<int>(p.surface_pool.rows());
        }
      } else {
        for (int k = 0; k < 3; ++k) base[k] = rng.uniform(cfg_.grid.aabb_min[k], cfg_.grid.aabb_max[k]);
      }
      for (int k = 0; k < 3; ++k)
        pts(n_uni + i, k) =
            std::clamp(base[k] + cfg_.eikonal_sigma * rng.normal(), cfg_.grid.aabb_min[k], cfg_.grid.aabb_max[k]);
    }

    ad::Tape tape(&store_, true);
    GeometryField::BatchEval eval = geometry_->eval(tape, pts, true, fine_scale);
    ad::Var eik = losses::eikonal_loss(eval.gradient);

    // curvature on the near-surface half: compare normals under a small
    // tangential perturbation (direction is data, not differentiated)
    std::vector<int> near_idx(n_near);
    for (int i = 0; i < n_near; ++i) near_idx[i] = n_uni + i;
    ad::Var n_base = ad::gather_rows(eval.normal, near_idx);
    const Eigen::MatrixXd n_val = n_base.value();
    Eigen::MatrixXd pts_pert(n_near, 3);
    for (int i = 0; i < n_near; ++i) {
      const Eigen::Vector3d n = n_val.row(i).transpose();
      Eigen::Vector3d v = rng.unit_vector();
      Eigen::Vector3d tau = v - v.dot(n) * n;
      if (tau.norm() < 1e-6) tau = n.unitOrthogonal();
      tau.normalize();
      pts_pert.row(i) = pts.row(n_uni + i) + cfg_.curvature_eps * tau.transpose();
    }
    GeometryField::BatchEval eval_pert = geometry_->eval(tape, pts_pert, true, fine_scale);
    ad::Var curv = losses::curvature_loss(n_base, eval_pert.normal);

    ad::Var reg_obj = ad::add(ad::scale(eik, cfg_.loss.eikonal), ad::scale(curv, lambda_curv));
    tape.backward(reg_obj);
    eik_value = eik.scalar();
    curv_value = curv.scalar();
    for (const auto& [id, node] : tape.param_nodes()) {
      const ad::Mat g = tape.param_grad(id);
      reg_grads[id] = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    }
  }

  // ordered reduction: ray chunks then the regularizer pass
  std::map<std::string, Eigen::VectorXd> grads;
  auto accumulate = [&grads](const std::map<std::string, Eigen::VectorXd>& part) {
    for (const auto& [id, g] : part) {
      auto it = grads.find(id);
      if (it == grads.end())
        grads[id] = g;
      else
        it->second += g;
    }
  };
  for (const auto& p : pieces) accumulate(p.grads);
  accumulate(reg_grads);

  adam_update(grads, learning_rate_at(current));
  store_.bump_version();
  ++step_;

  LossReport rep;
  double rgb_total = 0.0, orient_total = 0.0, entropy_total = 0.0;
  for (int c = 0; c < n_chunks; ++c) {
    rgb_total += pieces[c].rgb_sum + miss_rgb[c];
    orient_total += pieces[c].orient_sum;
    entropy_total += pieces[c].entropy_sum;
  }
  rep.rgb = rgb_total / B;
  rep.eik = eik_value;
  rep.curv = curv_value;
  rep.orient = orient_total / B;
  rep.alpha = entropy_total / pair_total;
  rep.total = rep.rgb + cfg_.loss.eikonal * rep.eik + lambda_curv * rep.curv + cfg_.loss.orientation * rep.orient +
              cfg_.loss.alpha * rep.alpha;

  if (!std::isfinite(rep.total)) {
    throw TrainerError("non-finite loss at step " + std::to_string(step_) + ": rgb=" + fmt17(rep.rgb) +
                       " eik=" + fmt17(rep.eik) + " curv=" + fmt17(rep.curv) + " orient=" + fmt17(rep.orient) +
                       " alpha=" + fmt17(rep.alpha));
  }
  if (!store_.all_finite()) throw TrainerError("non-finite parameter after step " + std::to_string(step_));
  return rep;
}

void Trainer::adam_update(const std::map<std::string, Eigen::VectorXd>& grads, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.99, eps = 1e-15;
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (auto& [id, p] : store_.all()) {
    auto mit = adam_m_.find(id);
    if (mit == adam_m_.end()) {
      adam_m_[id] = Eigen::VectorXd::Zero(p.values.size());
      adam_v_[id] = Eigen::VectorXd::Zero(p.values.size());
      mit = adam_m_.find(id);
    }
    Eigen::VectorXd& m = mit->second;
    Eigen::VectorXd& v = adam_v_[id];
    const auto git = grads.find(id);
    if (git == grads.end()) {
      // untouched this step: moments decay, parameter only moves if momentum remains
      m *= beta1;
      v *= beta2;
    } else {
      m = beta1 * m + (1.0 - beta1) * git->second;
      v = beta2 * v + (1.0 - beta2) * git->second.cwiseProduct(git->second).eval();
    }
    p.values -= (lr / bc1) * m.cwiseQuotient((v / bc2).cwiseSqrt().array().max(eps).matrix().eval());
  }
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.step = static_cast<std::uint64_t>(step_);
  ck.seed = cfg_.seed;
  ck.store_version = store_.version();
  ck.config_text = config_to_text(cfg_);
  ck.grid_signature = grid_->config().signature();
  for (const auto& [id, p] : store_.all()) ck.store.create(id, p.shape).values = p.values;
  ck.store.set_version(store_.version());
  ck.adam_m = adam_m_;
  ck.adam_v = adam_v_;
  ck.adam_t = adam_t_;
  return ck;
}

void Trainer::save(const std::string& path) const { save_checkpoint(snapshot(), path); }

Trainer Trainer::resume(const std::string& checkpoint_path, const std::string& dataset_override) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  TrainConfig cfg = config_from_text(ck.config_text);
  if (!dataset_override.empty()) cfg.dataset_dir = dataset_override;
  Trainer t(cfg, false);
  if (t.grid_->config().signature() != ck.grid_signature)
    throw TrainerError("resume: checkpoint grid layout " + ck.grid_signature + " does not match config " +
                       t.grid_->config().signature());
  for (const auto& [id, p] : ck.store.all()) t.store_.create(id, p.shape).values = p.values;
  t.store_.set_version(ck.store_version);
  t.adam_m_ = ck.adam_m;
  t.adam_v_ = ck.adam_v;
  t.adam_t_ = ck.adam_t;
  t.step_ = static_cast<int>(ck.step);
  return t;
}

void Trainer::load_params_from(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (ck.grid_signature != grid_->config().signature())
    throw TrainerError("load_params_from: grid layout mismatch: checkpoint " + ck.grid_signature + " vs config " +
                       grid_->config().signature());
  for (const auto& [id, p] : ck.store.all()) store_.at(id).values = p.values;
  store_.set_version(ck.store_version);
  adam_m_ = ck.adam_m;
  adam_v_ = ck.adam_v;
  adam_t_ = ck.adam_t;
  step_ = static_cast<int>(ck.step);
}

SplitEval evaluate_nvs(const ParameterStore& store, const RenderModel& model, const TrainConfig& cfg,
                       const std::string& split, int max_frames, double fine_scale) {
  SceneDataset ds = load_dataset(cfg.dataset_dir, split);
  SplitEval out;
  RenderOptions opt = cfg.render;
  opt.stratified = false;
  opt.fine_scale = fine_scale >= 0.0 ? fine_scale : (cfg.fine_enabled ? 1.0 : 0.0);
  double psnr_sum = 0.0, blend_sum = 0.0, mae_sum = 0.0;
  int blend_count = 0, mae_frames = 0;
  const int n = max_frames > 0 ? std::min(max_frames, ds.count()) : ds.count();
  for (int i = 0; i < n; ++i) {
    Camera cam = ds.camera(i);
    if (cfg.image_downscale > 1) {
      cam.width /= cfg.image_downscale;
      cam.height /= cfg.image_downscale;
    }
    ImageBuffers img = render_image(store, model, cam, opt, cfg.seed, cfg.threads);
    Eigen::MatrixXd gt = ds.frames[i].image.composite_over(cfg.render.background);
    if (cfg.image_downscale > 1) {
      int w, h;
      gt = downscale(gt, ds.width, ds.height, cfg.image_downscale, &w, &h);
    }
    psnr_sum += psnr(img.rgb, gt);
    for (Eigen::Index p = 0; p < img.opacity.size(); ++p)
      if (img.opacity[p] > 0.5) {
        blend_sum += img.blend_w[p];
        ++blend_count;
      }
    // ground-truth normals, when the dataset carries them
    const std::string base = ds.frames[i].file_path;
    const std::string normal_path = (fs::path(ds.root) / (base + "_normal.bin")).string();
    if (fs::exists(normal_path) && cfg.image_downscale == 1) {
      Eigen::MatrixXd gt_n = read_raw32(normal_path);
      std::vector<char> mask(img.opacity.size());
      for (Eigen::Index p = 0; p < img.opacity.size(); ++p)
        mask[p] = img.opacity[p] > 0.5 && gt_n.row(p).norm() > 0.5;
      int masked = 0;
      for (char m : mask) masked += m;
      if (masked > 0) {
        mae_sum += normal_mae(img.normal, gt_n, mask);
        ++mae_frames;
      }
    }
  }
  out.frames = n;
  out.psnr = n > 0 ? psnr_sum / n : 0.0;
  out.mean_blend_weight = blend_count > 0 ? blend_sum / blend_count : 0.5;
  out.normal_mae_deg = mae_frames > 0 ? mae_sum / mae_frames : -1.0;
  return out;
}

SplitEval Trainer::eval_split(const std::string& split, int max_frames) const {
  return evaluate_nvs(store_, model(), cfg_, split, max_frames, fine_scale_at(std::max(step_ - 1, 0)));
}

TrainSummary Trainer::train() {
  cfg_.validate();
  fs::create_directories(cfg_.out_dir);
  const std::string log_path = (fs::path(cfg_.out_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw TrainerError("train: cannot open log " + log_path);
  log << "step,rgb,eik,curv,orient,alpha,total,s\n";

  if (cfg_.threads > 0) set_thread_cap(cfg_.threads);

  const auto t0 = std::chrono::steady_clock::now();
  TrainSummary summary;
  LossReport rep;
  while (step_ < cfg_.total_steps) {
    try {
      rep = train_step();
    } catch (const TrainerError& e) {
      std::ofstream diag(fs::path(cfg_.out_dir) / "diagnostic.txt");
      diag << e.what() << "\n";
      throw;
    }
    const int s = step_;  // completed steps
    if (s == 1 || s == cfg_.total_steps || (cfg_.log_interval > 0 && s % cfg_.log_interval == 0)) {
      log << s << "," << fmt17(rep.rgb) << "," << fmt17(rep.eik) << "," << fmt17(rep.curv) << ","
          << fmt17(rep.orient) << "," << fmt17(rep.alpha) << "," << fmt17(rep.total) << ","
          << fmt17(RenderModel::sharpness(store_)) << "\n";
      log.flush();
    }
    if (cfg_.checkpoint_interval > 0 && s % cfg_.checkpoint_interval == 0 && s != cfg_.total_steps)
      save((fs::path(cfg_.out_dir) / ("ckpt_step" + std::to_string(s) + ".anisdf")).string());
  }
  summary.checkpoint_path = (fs::path(cfg_.out_dir) / "ckpt_final.anisdf").string();
  save(summary.checkpoint_path);
  summary.steps = step_;
  summary.final_loss = rep;
  summary.log_path = log_path;
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    summary.val_psnr = eval_split("val").psnr;
  } catch (const IoError&) {
    summary.val_psnr = -1.0;  // no val split
  }
  return summary;
}

}  // namespace anisdf
