#include "anisdf/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "anisdf/checkpoint.hpp"
#include "anisdf/evalkit.hpp"
#include "anisdf/gradcheck.hpp"
#include "anisdf/meshing.hpp"
#include "anisdf/parallel.hpp"
#include "anisdf/scenegen.hpp"
#include "anisdf/trainer.hpp"

namespace anisdf::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Modules rebuilt from a checkpoint, without any dataset dependency.
struct LoadedModel {
  TrainConfig cfg;
  ParameterStore store;
  std::unique_ptr<HashGrid> grid;
  std::unique_ptr<GeometryField> geometry;
  std::unique_ptr<Appearance> appearance;

  RenderModel model() const {
    RenderModel m;
    m.grid = grid.get();
    m.geometry = geometry.get();
    m.appearance = appearance.get();
    return m;
  }
};

LoadedModel load_model(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  LoadedModel lm;
  lm.cfg = config_from_text(ck.config_text);
  lm.grid = std::make_unique<HashGrid>(lm.cfg.grid);
  if (lm.grid->config().signature() != ck.grid_signature)
    throw CheckpointError("checkpoint grid signature mismatch: " + ck.grid_signature);
  lm.cfg.appearance.feature_dim = lm.cfg.geometry.feature_dim;
  lm.geometry = std::make_unique<GeometryField>(lm.grid.get(), lm.cfg.geometry);
  lm.appearance = std::make_unique<Appearance>(lm.grid.get(), lm.cfg.appearance);
  for (const auto& [id, p] : ck.store.all()) lm.store.create(id, p.shape).values = p.values;
  lm.store.set_version(ck.store_version);
  return lm;
}

void write_report(const ordered_json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write report to " + out_path);
    out << j.dump(2) << "\n";
  }
}

int run_gen_scene(const std::string& kind, int views, int res, const std::string& out_dir, std::uint64_t seed,
                  double rod_radius, double distance, bool no_aux) {
  AnalyticScene scene = AnalyticScene::make(kind);
  scene.rod_radius = rod_radius;
  EmitOptions opt;
  opt.n_views = views;
  opt.resolution = res;
  opt.seed = seed;
  opt.camera_distance = distance;
  opt.write_aux = !no_aux;
  EmitResult split = emit_dataset(scene, opt, out_dir);
  std::cout << "wrote " << scene_kind_name(scene.kind) << " dataset to " << out_dir << " (train " << split.train
            << ", val " << split.val << ", test " << split.test << ")\n";
  return 0;
}

FieldFn field_for(const LoadedModel& lm, double fine_scale) {
  return [&lm, fine_scale](const Eigen::MatrixXd& pts) { return lm.geometry->sdf_values(lm.store, pts, fine_scale); };
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"fused-granularity neural SDF reconstruction with blended radiance fields"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (also env ANISDF_THREADS)");

  // ---- gen-scene ----
  auto* gen = app.add_subcommand("gen-scene", "render an analytic oracle scene into a dataset");
  std::string gen_kind = "sphere", gen_out = "dataset";
  int gen_views = 20, gen_res = 64;
  std::uint64_t gen_seed = 0;
  double gen_rod_radius = 0.004, gen_distance = 2.7;
  bool gen_no_aux = false;
  gen->add_option("kind", gen_kind, "sphere|torus|rods|mirror-sphere|composite")->required();
  gen->add_option("--views", gen_views, "number of cameras");
  gen->add_option("--res", gen_res, "image resolution");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "split shuffle seed");
  gen->add_option("--rod-radius", gen_rod_radius, "thin rod radius (rods scene)");
  gen->add_option("--distance", gen_distance, "camera orbit distance");
  gen->add_flag("--no-aux", gen_no_aux, "skip raw normal/depth dumps");

  // ---- train ----
  auto* train = app.add_subcommand("train", "optimize a model on a dataset");
  std::string train_dataset, train_config, train_out = "run", train_resume;
  std::vector<std::string> train_sets;
  bool print_config = false;
  long long train_steps = -1, train_rays = -1;
  long long train_seed = -1;
  train->add_option("--dataset", train_dataset, "dataset directory (transforms_train.json)");
  train->add_option("--config", train_config, "config file (key = value with [sections])");
  train->add_option("--out", train_out, "run output directory");
  train->add_option("--steps", train_steps, "override train.total_steps");
  train->add_option("--rays", train_rays, "override train.rays_per_batch");
  train->add_option("--seed", train_seed, "override train.seed");
  train->add_option("--set", train_sets, "override any config key, e.g. --set grid.table_size=32768")
      ->take_all();
  train->add_option("--resume", train_resume, "continue from a checkpoint");
  train->add_flag("--print-config", print_config, "print the effective config and exit");

  // ---- render ----
  auto* render = app.add_subcommand("render", "render a view from a checkpoint");
  std::string render_ckpt, render_out = "render.png", render_dataset, render_split = "test";
  std::string render_depth_out, render_normal_out;
  int render_frame = 0, render_res = -1;
  double render_azimuth = 30.0, render_elevation = 25.0, render_distance = 2.7;
  bool render_orbit = false;
  render->add_option("--checkpoint", render_ckpt)->required();
  render->add_option("--out", render_out, "output PNG");
  render->add_option("--dataset", render_dataset, "dataset to take the camera from");
  render->add_option("--split", render_split);
  render->add_option("--frame", render_frame, "frame index within the split");
  render->add_flag("--orbit", render_orbit, "use an orbit camera instead of a dataset pose");
  render->add_option("--azimuth", render_azimuth, "orbit azimuth (degrees)");
  render->add_option("--elevation", render_elevation, "orbit elevation (degrees)");
  render->add_option("--distance", render_distance, "orbit distance");
  render->add_option("--res", render_res, "override image resolution");
  render->add_option("--depth-out", render_depth_out, "write depth (PNG + raw .bin)");
  render->add_option("--normal-out", render_normal_out, "write normals (PNG + raw .bin)");

  // ---- extract-mesh ----
  auto* mesh = app.add_subcommand("extract-mesh", "run marching cubes on the zero level set");
  std::string mesh_ckpt, mesh_out = "mesh.obj", mesh_format = "obj";
  int mesh_res = 256;
  bool mesh_coarse_only = false;
  mesh->add_option("--checkpoint", mesh_ckpt)->required();
  mesh->add_option("--resolution", mesh_res, "samples per axis");
  mesh->add_option("--out", mesh_out)->required();
  mesh->add_option("--format", mesh_format, "obj|ply");
  mesh->add_flag("--coarse-only", mesh_coarse_only, "drop the fine branch (granularity ablation)");

  // ---- eval-nvs ----
  auto* nvs = app.add_subcommand("eval-nvs", "novel-view PSNR against a dataset split");
  std::string nvs_ckpt, nvs_dataset, nvs_split = "test", nvs_out;
  int nvs_max_frames = -1;
  nvs->add_option("--checkpoint", nvs_ckpt)->required();
  nvs->add_option("--dataset", nvs_dataset)->required();
  nvs->add_option("--split", nvs_split);
  nvs->add_option("--out", nvs_out, "write the JSON report here instead of stdout");
  nvs->add_option("--max-frames", nvs_max_frames);

  // ---- eval-geom ----
  auto* geom = app.add_subcommand("eval-geom", "chamfer distance of a mesh against a reference");
  std::string geom_mesh, geom_ref_mesh, geom_scene, geom_out;
  int geom_samples = 100000;
  std::uint64_t geom_seed = 0;
  int geom_ref_res = 256;
  geom->add_option("--mesh", geom_mesh)->required();
  geom->add_option("--reference-mesh", geom_ref_mesh, "reference triangle mesh");
  geom->add_option("--analytic-scene", geom_scene, "reference analytic scene kind");
  geom->add_option("--samples", geom_samples, "surface samples per side");
  geom->add_option("--seed", geom_seed);
  geom->add_option("--reference-resolution", geom_ref_res, "marching-cubes resolution for analytic references");
  geom->add_option("--out", geom_out, "write the JSON report here instead of stdout");

  // ---- grad-check ----
  auto* gc = app.add_subcommand("grad-check", "finite-difference verification of the gradient engine");
  std::uint64_t gc_seed = 7;
  int gc_seeds = 5, gc_coords = 60;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--seeds", gc_seeds, "random draws per case");
  gc->add_option("--coords", gc_coords, "coordinates checked per draw");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (threads > 0) set_thread_cap(threads);

  try {
    if (gen->parsed())
      return run_gen_scene(gen_kind, gen_views, gen_res, gen_out, gen_seed, gen_rod_radius, gen_distance, gen_no_aux);

    if (train->parsed()) {
      if (!train_resume.empty()) {
        Trainer t = Trainer::resume(train_resume, train_dataset);
        TrainSummary s = t.train();
        std::cout << "resumed to step " << s.steps << ", final loss " << s.final_loss.total << "\n";
        return 0;
      }
      TrainConfig cfg;
      if (!train_config.empty()) {
        std::ifstream in(train_config);
        if (!in) throw IoError("cannot open config " + train_config);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        cfg = config_from_text(text);
      }
      if (!train_dataset.empty()) cfg.dataset_dir = train_dataset;
      cfg.out_dir = train_out;
      if (train_steps > 0) cfg.total_steps = static_cast<int>(train_steps);
      if (train_rays > 0) cfg.rays_per_batch = static_cast<int>(train_rays);
      if (train_seed >= 0) cfg.seed = static_cast<std::uint64_t>(train_seed);
      if (threads > 0) cfg.threads = threads;
      for (const std::string& kv : train_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
        const std::string key = kv.substr(0, eq);
        const auto dot = key.find('.');
        if (dot == std::string::npos) throw std::invalid_argument("--set expects section.key=value, got " + kv);
        apply_config_line(cfg, key.substr(0, dot), key.substr(dot + 1), kv.substr(eq + 1));
      }
      if (print_config) {
        std::cout << config_to_text(cfg);
        return 0;
      }
      if (cfg.dataset_dir.empty()) throw std::invalid_argument("train: --dataset (or config dataset_dir) is required");
      Trainer trainer(cfg);
      TrainSummary s = trainer.train();
      std::cout << "trained " << s.steps << " steps in " << s.wall_seconds << "s; final loss " << s.final_loss.total;
      if (s.val_psnr >= 0) std::cout << "; val PSNR " << s.val_psnr << " dB";
      std::cout << "\ncheckpoint: " << s.checkpoint_path << "\nlog: " << s.log_path << "\n";
      return 0;
    }

    if (render->parsed()) {
      LoadedModel lm = load_model(render_ckpt);
      Camera cam;
      if (render_orbit || render_dataset.empty()) {
        const double az = render_azimuth * M_PI / 180.0, el = render_elevation * M_PI / 180.0;
        const Eigen::Vector3d eye(render_distance * std::cos(el) * std::cos(az),
                                  render_distance * std::cos(el) * std::sin(az), render_distance * std::sin(el));
        const int res = render_res > 0 ? render_res : 256;
        cam = Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1), 0.6911112, res, res);
      } else {
        SceneDataset ds = load_dataset(render_dataset, render_split);
        if (render_frame < 0 || render_frame >= ds.count())
          throw std::out_of_range("render: frame index outside split");
        cam = ds.camera(render_frame);
        if (render_res > 0) {
          cam.width = render_res;
          cam.height = render_res;
        }
      }
      RenderOptions opt = lm.cfg.render;
      opt.stratified = false;
      opt.fine_scale = lm.cfg.fine_enabled ? 1.0 : 0.0;
      ImageBuffers img = render_image(lm.store, lm.model(), cam, opt, lm.cfg.seed, threads);
      write_png(render_out, Image8::from_float(img.rgb, &img.opacity, img.width, img.height));
      if (!render_depth_out.empty()) {
        const double far = img.depth.maxCoeff();
        write_png_gray(render_depth_out, far > 0 ? (img.depth / far).eval() : img.depth, img.width, img.height);
        write_raw32(render_depth_out + ".bin", img.depth, img.width, img.height, 1);
      }
      if (!render_normal_out.empty()) {
        Eigen::MatrixXd vis = (img.normal.array() * 0.5 + 0.5).matrix();
        write_png(render_normal_out, Image8::from_float(vis, &img.opacity, img.width, img.height));
        write_raw32(render_normal_out + ".bin", img.normal, img.width, img.height, 3);
      }
      std::cout << "wrote " << render_out << "\n";
      return 0;
    }

    if (mesh->parsed()) {
      LoadedModel lm = load_model(mesh_ckpt);
      const double fine_scale = mesh_coarse_only || !lm.cfg.fine_enabled ? 0.0 : 1.0;
      ScalarGrid grid =
          sample_grid(field_for(lm, fine_scale), mesh_res, lm.cfg.grid.aabb_min, lm.cfg.grid.aabb_max, threads);
      TriangleMesh tri = marching_cubes(grid, 0.0);
      export_mesh(tri, mesh_out, mesh_format);
      std::cout << "wrote " << mesh_out << " (" << tri.vertex_count() << " vertices, " << tri.triangle_count()
                << " triangles)\n";
      return 0;
    }

    if (nvs->parsed()) {
      LoadedModel lm = load_model(nvs_ckpt);
      lm.cfg.dataset_dir = nvs_dataset;
      SplitEval ev = evaluate_nvs(lm.store, lm.model(), lm.cfg, nvs_split, nvs_max_frames);
      ordered_json j;
      j["metric"] = "psnr";
      j["value"] = ev.psnr;
      j["split"] = nvs_split;
      j["n_frames"] = ev.frames;
      j["seed"] = lm.cfg.seed;
      j["mean_blend_weight"] = ev.mean_blend_weight;
      if (ev.normal_mae_deg >= 0) j["normal_mae_deg"] = ev.normal_mae_deg;
      write_report(j, nvs_out);
      return 0;
    }

    if (geom->parsed()) {
      TriangleMesh candidate = import_mesh(geom_mesh);
      TriangleMesh reference;
      std::string ref_desc;
      if (!geom_ref_mesh.empty()) {
        reference = import_mesh(geom_ref_mesh);
        ref_desc = geom_ref_mesh;
      } else if (!geom_scene.empty()) {
        AnalyticScene scene = AnalyticScene::make(geom_scene);
        ScalarGrid grid = sample_grid([&scene](const Eigen::MatrixXd& pts) {
          Eigen::VectorXd v(pts.rows());
          for (Eigen::Index i = 0; i < pts.rows(); ++i) v[i] = scene.sdf(pts.row(i).transpose());
          return v;
        }, geom_ref_res, scene.aabb_min, scene.aabb_max, threads);
        reference = marching_cubes(grid, 0.0);
        ref_desc = std::string("analytic:") + scene_kind_name(scene.kind);
      } else {
        throw std::invalid_argument("eval-geom: need --reference-mesh or --analytic-scene");
      }
      Eigen::MatrixXd a = sample_mesh_surface(candidate, geom_samples, geom_seed);
      Eigen::MatrixXd b = sample_mesh_surface(reference, geom_samples, Rng::mix(geom_seed, 1));
      ordered_json j;
      j["metric"] = "chamfer";
      j["value"] = chamfer(a, b);
      j["variant"] = kChamferVariant;
      j["n_samples"] = geom_samples;
      j["seed"] = geom_seed;
      j["reference"] = ref_desc;
      write_report(j, geom_out);
      return 0;
    }

    if (gc->parsed()) {
      std::vector<GradCheckCase> cases = run_gradient_suite(gc_seed, gc_seeds, gc_coords);
      bool ok = true;
      double worst = 0.0;
      for (const GradCheckCase& c : cases) {
        std::cout << (c.passed() ? "[PASS] " : "[FAIL] ") << c.name << " max_rel_error=" << c.max_rel_error
                  << " (coords " << c.coords << ", seeds " << c.seeds << ", rejected " << c.rejected << ")\n";
        ok = ok && c.passed();
        worst = std::max(worst, c.max_rel_error);
      }
      std::cout << "max relative error: " << worst << "\n";
      return ok ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace anisdf::cli
