#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "anisdf/meshing.hpp"

namespace anisdf {

// 10 log10(max^2 / MSE), capped at 99 dB for identical images.
double psnr(const Eigen::MatrixXd& img_a, const Eigen::MatrixXd& img_b, double max_value = 1.0);

// Exact nearest neighbors over 3-D points (median-split tree).
class KdTree3 {
 public:
  explicit KdTree3(const Eigen::MatrixXd& points);
  // squared distance and index of the nearest point
  std::pair<double, int> nearest(const Eigen::Vector3d& q) const;
  int size() const { return static_cast<int>(pts_.rows()); }

 private:
  struct Node {
    int axis = 0;
    int point = -1;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Eigen::Vector3d& q, double& best, int& best_idx) const;
  Eigen::MatrixXd pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Symmetric mean nearest-neighbor distance (mean of distances, not squared):
// 0.5 * (mean_a d(a, B) + mean_b d(b, A)).
double chamfer(const Eigen::MatrixXd& points_a, const Eigen::MatrixXd& points_b);
constexpr const char* kChamferVariant = "symmetric-mean-distance";

// Area-weighted surface samples; deterministic for a given seed.
Eigen::MatrixXd sample_mesh_surface(const TriangleMesh& mesh, int n_samples, std::uint64_t seed);

// Mean angular error over masked rows, in degrees. Rows must be unit (or
// zero for unmasked pixels); errors on an empty mask are rejected.
double normal_mae(const Eigen::MatrixXd& normals_pred, const Eigen::MatrixXd& normals_gt,
                  const std::vector<char>& mask);

}  // namespace anisdf
