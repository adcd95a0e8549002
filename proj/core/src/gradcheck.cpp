#include "anisdf/gradcheck.hpp"

#include "anisdf/losses.hpp"
#include "anisdf/rng.hpp"

namespace anisdf {

RenderModel GradCheckModel::model() const {
  RenderModel m;
  m.grid = grid.get();
  m.geometry = geometry.get();
  m.appearance = appearance.get();
  return m;
}

GradCheckModel make_gradcheck_model(std::uint64_t seed, int geometry_width, int ref_width) {
  GradCheckModel m;
  m.grid_cfg.table_size = 1 << 13;
  m.grid_cfg.max_resolution = 128;
  m.grid_cfg.aabb_min = Eigen::Vector3d(-1, -1, -1);
  m.grid_cfg.aabb_max = Eigen::Vector3d(1, 1, 1);
  m.grid = std::make_unique<HashGrid>(m.grid_cfg);

  GeometryConfig gcfg;
  gcfg.hidden_width = geometry_width;
  AppearanceConfig acfg;
  acfg.ref_hidden = ref_width;
  m.geometry = std::make_unique<GeometryField>(m.grid.get(), gcfg);
  m.appearance = std::make_unique<Appearance>(m.grid.get(), acfg);

  Rng rng(Rng::mix(seed, 0x6763696eull));
  m.grid->register_params(m.store, rng, 1e-2);  // livelier entries than training init
  m.geometry->register_params(m.store, rng);
  m.appearance->register_params(m.store, rng);
  RenderModel::register_sharpness(m.store, 12.0);
  // nudge every weight off its structured initialization
  for (auto& [id, p] : m.store.all())
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] += 0.02 * rng.normal();
  return m;
}

namespace {

Eigen::MatrixXd random_interior_points(const GradCheckModel& m, Rng& rng, int n) {
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) pts(i, k) = rng.uniform(-0.8, 0.8);
  return pts;
}

// points whose surrounding trilinear cells are at least `margin` away in
// every level; finite differences in x are invalid across lattice planes
Eigen::MatrixXd lattice_safe_points(const GradCheckModel& m, Rng& rng, int n, double margin) {
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Eigen::MatrixXd p(1, 3);
      for (int k = 0; k < 3; ++k) p(0, k) = rng.uniform(-0.8, 0.8);
      Eigen::MatrixXd unit = m.grid->to_unit(p);
      if (m.grid->lattice_margin(unit, m.grid_cfg.coarse_min, m.grid_cfg.level_L) >
          margin / (m.grid_cfg.aabb_max[0] - m.grid_cfg.aabb_min[0])) {
        pts.row(i) = p.row(0);
        break;
      }
      if (attempt == 999) pts.row(i) = p.row(0);
    }
  }
  return pts;
}

struct CaseRunner {
  GradCheckCase result;
  double kink_threshold;
  ad::FdOptions opt;

  void accept(const ad::FdReport& rep, bool rejected) {
    ++result.seeds;
    if (rejected) {
      ++result.rejected;
      return;
    }
    result.max_rel_error = std::max(result.max_rel_error, rep.max_rel_error);
    result.coords += rep.coords_checked;
  }
};

}  // namespace

std::vector<GradCheckCase> run_gradient_suite(std::uint64_t seed, int seeds, int coords_per_seed) {
  std::vector<GradCheckCase> cases;
  GradCheckModel m = make_gradcheck_model(seed);
  RenderModel mdl = m.model();

  auto run_case = [&](const std::string& name, double step, double atol, bool inputs_diff,
                      const std::function<ad::Program(Rng&)>& make_program,
                      const std::function<std::vector<ad::Mat>(Rng&)>& make_inputs) {
    CaseRunner runner;
    runner.result.name = name;
    runner.opt.step = step;
    runner.opt.atol = atol;
    runner.opt.max_coords = coords_per_seed;
    runner.opt.inputs_differentiable = inputs_diff;
    runner.kink_threshold = 100.0 * step;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(Rng::mix(seed, std::hash<std::string>{}(name), s));
      runner.opt.seed = Rng::mix(seed, 0xc001d5ull, s);
      ad::Program program = make_program(rng);
      std::vector<ad::Mat> inputs = make_inputs(rng);
      ad::FdReport rep = ad::finite_difference_check(program, m.store, inputs, runner.opt);
      runner.accept(rep, rep.kink_margin < runner.kink_threshold);
    }
    cases.push_back(runner.result);
  };

  const double fine_scale = 0.7;  // keep both branches live

  // (a) losses --------------------------------------------------------------
  run_case("loss_eikonal", 1e-5, 1e-7, false,
           [&](Rng& rng) -> ad::Program {
             Eigen::MatrixXd pts = random_interior_points(m, rng, 4);
             return [&, pts](ad::Tape& tape, const std::vector<ad::Var>&) -> std::vector<ad::Var> {
               auto eval = m.geometry->eval(tape, pts, true, fine_scale);
               return {losses::eikonal_loss(eval.gradient)};
             };
           },
           [](Rng&) { return std::vector<ad::Mat>{}; });

  run_case("loss_curvature", 1e-5, 1e-7, false,
           [&](Rng& rng) -> ad::Program {
             Eigen::MatrixXd pts = random_interior_points(m, rng, 3);
             Eigen::MatrixXd pert = pts;
             for (int i = 0; i < 3; ++i) pert.row(i) += 0.01 * rng.unit_vector().transpose();
             return [&, pts, pert](ad::Tape& tape, const std::vector<ad::Var>&) -> std::vector<ad::Var> {
               auto a = m.geometry->eval(tape, pts, true, fine_scale);
               auto b = m.geometry->eval(tape, pert, true, fine_scale);
               return {losses::curvature_loss(a.normal, b.normal)};
             };
           },
           [](Rng&) { return std::vector<ad::Mat>{}; });

  RenderOptions render_opt;
  render_opt.n_uniform = 4;
  render_opt.importance_rounds = 0;
  render_opt.stratified = false;
  render_opt.fine_scale = fine_scale;
  render_opt.min_near = 0.05;

  auto random_ray = [&](Rng& rng) {
    const Eigen::Vector3d eye = 2.2 * rng.unit_vector();
    Eigen::Vector3d target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
    Ray ray;
    ray.origin = eye;
    ray.dir = (target - eye).normalized();
    return ray;
  };

  auto render_program = [&](Rng& rng, int which_loss) -> ad::Program {
    const Ray ray = random_ray(rng);
    Eigen::RowVector3d gt(rng.uniform01(), rng.uniform01(), rng.uniform01());
    const std::uint64_t rseed = rng.next_u64();
    return [&, ray, gt, rseed, which_loss](ad::Tape& tape, const std::vector<ad::Var>&) -> std::vector<ad::Var> {
      BatchRender br = render_rays(tape, mdl, {ray}, render_opt, rseed);
      if (br.hit_rays.empty()) return {tape.constant_scalar(0.0)};
      switch (which_loss) {
        case 0: return {losses::rgb_loss(tape, br.color, gt)};
        case 1:
          return {losses::orientation_loss(br.weights, br.normals, br.pair_dirs, br.pair_offsets, 1)};
        case 2: return {losses::alpha_entropy_loss(br.alphas)};
        default: {  // full pixel graph
          ad::Var probe = tape.constant(Eigen::RowVector3d(0.41, 0.33, 0.26).transpose());
          return {ad::sum(ad::matmul(br.color, probe))};
        }
      }
    };
  };

  run_case("loss_rgb", 1e-6, 1e-6, false,
           [&](Rng& rng) { return render_program(rng, 0); }, [](Rng&) { return std::vector<ad::Mat>{}; });
  run_case("loss_orientation", 1e-6, 1e-6, false,
           [&](Rng& rng) { return render_program(rng, 1); }, [](Rng&) { return std::vector<ad::Mat>{}; });
  run_case("loss_alpha_entropy", 1e-6, 1e-6, false,
           [&](Rng& rng) { return render_program(rng, 2); }, [](Rng&) { return std::vector<ad::Mat>{}; });

  // (b) hash encoding w.r.t. x and entries -----------------------------------
  run_case("hashgrid_encoding", 1e-6, 1e-8, true,
           [&](Rng& rng) -> ad::Program {
             Eigen::VectorXd probe(m.grid_cfg.coarse_dim() + m.grid_cfg.fine_dim());
             for (Eigen::Index i = 0; i < probe.size(); ++i) probe[i] = rng.uniform(-1, 1);
             return [&, probe](ad::Tape& tape, const std::vector<ad::Var>& inputs) -> std::vector<ad::Var> {
               ad::Var x = inputs[0];
               Eigen::MatrixXd unit = m.grid->to_unit(x.value());
               std::array<ad::Var, 3> dc, df;
               ad::Var enc_c = m.grid->encode_coarse(tape, unit, &dc);
               ad::Var enc_f = m.grid->encode_fine(tape, unit, &df);
               ad::Var enc = ad::concat_cols({enc_c, enc_f});
               std::array<ad::Mat, 3> jac;
               for (int k = 0; k < 3; ++k) {
                 jac[k].resize(enc.rows(), enc.cols());
                 jac[k] << dc[k].value(), df[k].value();
               }
               ad::Var tied = ad::attach_input_jacobian(enc, x, jac);
               return {ad::matmul(tied, tape.constant(probe))};
             };
           },
           [&](Rng& rng) {
             // margin keeps every level's trilinear cell interior through the FD span
             return std::vector<ad::Mat>{lattice_safe_points(m, rng, 2, 1e-4)};
           });

  // (c) the full render-pixel graph ------------------------------------------
  run_case("render_pixel_graph", 1e-6, 1e-6, false,
           [&](Rng& rng) { return render_program(rng, 3); }, [](Rng&) { return std::vector<ad::Mat>{}; });

  return cases;
}

}  // namespace anisdf
