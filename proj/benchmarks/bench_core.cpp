#include <benchmark/benchmark.h>

#include "anisdf/gradcheck.hpp"
#include "anisdf/losses.hpp"
#include "anisdf/rng.hpp"

namespace {

using namespace anisdf;

GradCheckModel& shared_model() {
  static GradCheckModel m = make_gradcheck_model(11, 64, 128);
  return m;
}

Eigen::MatrixXd random_points(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd pts(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) pts(i, k) = rng.uniform(-0.8, 0.8);
  return pts;
}

void BM_HashEncode(benchmark::State& state) {
  GradCheckModel& m = shared_model();
  const Eigen::MatrixXd pts = random_points(static_cast<int>(state.range(0)), 3);
  const Eigen::MatrixXd unit = m.grid->to_unit(pts);
  for (auto _ : state) {
    ad::Tape tape(&m.store, false);
    benchmark::DoNotOptimize(m.grid->encode_coarse(tape, unit).value().sum());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HashEncode)->Arg(256)->Arg(2048);

void BM_GeometryEval(benchmark::State& state) {
  GradCheckModel& m = shared_model();
  const Eigen::MatrixXd pts = random_points(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    ad::Tape tape(&m.store, false);
    benchmark::DoNotOptimize(m.geometry->eval(tape, pts, true).sdf.value().sum());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeometryEval)->Arg(256)->Arg(2048);

void BM_RenderRayBatch(benchmark::State& state) {
  GradCheckModel& m = shared_model();
  RenderModel mdl = m.model();
  RenderOptions opt;
  opt.n_uniform = 32;
  opt.n_importance = 16;
  opt.importance_rounds = 1;
  Rng rng(17);
  std::vector<Ray> rays;
  for (int i = 0; i < state.range(0); ++i) {
    Ray r;
    r.origin = 2.2 * rng.unit_vector();
    r.dir = (Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)) - r.origin)
                .normalized();
    rays.push_back(r);
  }
  for (auto _ : state) {
    ad::Tape tape(&m.store, false);
    benchmark::DoNotOptimize(render_rays(tape, mdl, rays, opt, 7).n_samples());
  }
  state.SetItemsProcessed(state.iterations() * rays.size());
}
BENCHMARK(BM_RenderRayBatch)->Arg(16)->Arg(64);

void BM_RenderBackward(benchmark::State& state) {
  GradCheckModel& m = shared_model();
  RenderModel mdl = m.model();
  RenderOptions opt;
  opt.n_uniform = 32;
  opt.n_importance = 16;
  opt.importance_rounds = 1;
  Rng rng(23);
  std::vector<Ray> rays;
  for (int i = 0; i < state.range(0); ++i) {
    Ray r;
    r.origin = 2.2 * rng.unit_vector();
    r.dir = (Eigen::Vector3d::Zero() - r.origin).normalized();
    rays.push_back(r);
  }
  Eigen::MatrixXd gt = Eigen::MatrixXd::Constant(rays.size(), 3, 0.5);
  for (auto _ : state) {
    ad::Tape tape(&m.store, true);
    BatchRender br = render_rays(tape, mdl, rays, opt, 7);
    Eigen::MatrixXd gt_hit(br.hit_rays.size(), 3);
    for (std::size_t i = 0; i < br.hit_rays.size(); ++i) gt_hit.row(i) = gt.row(br.hit_rays[i]);
    ad::Var loss = losses::rgb_loss(tape, br.color, gt_hit);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
  state.SetItemsProcessed(state.iterations() * rays.size());
}
BENCHMARK(BM_RenderBackward)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
