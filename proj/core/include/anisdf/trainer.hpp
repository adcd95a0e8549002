#pragma once

#include <map>
#include <memory>
#include <string>

#include "anisdf/checkpoint.hpp"
#include "anisdf/config.hpp"
#include "anisdf/losses.hpp"
#include "anisdf/scenegen.hpp"

namespace anisdf {

struct TrainerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainSummary {
  int steps = 0;
  double wall_seconds = 0.0;
  LossReport final_loss;
  double val_psnr = -1.0;  // -1 when no val split exists
  std::string checkpoint_path;
  std::string log_path;
};

struct SplitEval {
  double psnr = 0.0;
  double mean_blend_weight = 0.5;  // over pixels with opacity > 0.5
  double normal_mae_deg = -1.0;    // -1 when no ground-truth normals exist
  int frames = 0;
};

// Renders every frame of cfg.dataset_dir's split and reports PSNR against the
// background-composited ground truth, plus the mean blend weight over surface
// hits and (when the dataset carries *_normal.bin dumps) the normal MAE.
SplitEval evaluate_nvs(const ParameterStore& store, const RenderModel& model, const TrainConfig& cfg,
                       const std::string& split, int max_frames = -1, double fine_scale = -1.0);

// Owns the parameter store, the module stack and the optimization loop.
// Fully deterministic: every random draw derives from (seed, purpose, step),
// so identical configs give bit-identical parameter trajectories and resuming
// a checkpoint continues exactly where the run left off.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  static Trainer resume(const std::string& checkpoint_path, const std::string& dataset_override = "");

  // One optimizer step; throws TrainerError on a non-finite loss.
  LossReport train_step();
  TrainSummary train();

  Checkpoint snapshot() const;
  void save(const std::string& path) const;
  // Replaces parameters/optimizer state; rejects mismatched grid layouts.
  void load_params_from(const std::string& checkpoint_path);

  SplitEval eval_split(const std::string& split, int max_frames = -1) const;

  const TrainConfig& config() const { return cfg_; }
  const ParameterStore& store() const { return store_; }
  ParameterStore& store() { return store_; }
  RenderModel model() const;
  RenderOptions train_render_options() const;
  RenderOptions eval_render_options() const;
  double fine_scale_at(int step) const;
  double curvature_weight_at(int step) const;
  double learning_rate_at(int step) const;
  int step() const { return step_; }
  const GeometryField& geometry() const { return *geometry_; }
  const Appearance& appearance() const { return *appearance_; }
  const HashGrid& grid() const { return *grid_; }
  int train_pixel_count() const { return n_frames_ * img_w_ * img_h_; }

 private:
  Trainer(TrainConfig cfg, bool fresh_params);
  void build_modules();
  void init_params();
  void load_data();

  struct PixelBatch {
    std::vector<Ray> rays;
    Eigen::MatrixXd gt;  // [B,3] white-composited
  };
  PixelBatch make_batch(int step) const;
  const Eigen::VectorXi& epoch_permutation(int epoch) const;

  struct StepPieces;
  void adam_update(const std::map<std::string, Eigen::VectorXd>& grads, double lr);

  TrainConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<HashGrid> grid_;
  std::unique_ptr<GeometryField> geometry_;
  std::unique_ptr<Appearance> appearance_;

  std::vector<Camera> cameras_;
  std::vector<Eigen::MatrixXd> gt_images_;  // per frame, [W*H,3]
  int img_w_ = 0, img_h_ = 0, n_frames_ = 0;

  std::map<std::string, Eigen::VectorXd> adam_m_, adam_v_;
  std::uint64_t adam_t_ = 0;
  int step_ = 0;

  mutable std::map<int, Eigen::VectorXi> perm_cache_;
};

}  // namespace anisdf
