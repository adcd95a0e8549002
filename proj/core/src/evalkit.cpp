#include "anisdf/evalkit.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "anisdf/rng.hpp"

namespace anisdf {

double psnr(const Eigen::MatrixXd& img_a, const Eigen::MatrixXd& img_b, double max_value) {
  if (img_a.rows() != img_b.rows() || img_a.cols() != img_b.cols())
    throw std::invalid_argument("psnr: dimension mismatch");
  if (max_value <= 0) throw std::invalid_argument("psnr: max_value must be positive");
  const double mse = (img_a - img_b).squaredNorm() / static_cast<double>(img_a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(max_value * max_value / mse));
}

KdTree3::KdTree3(const Eigen::MatrixXd& points) : pts_(points) {
  if (points.rows() == 0) throw std::invalid_argument("KdTree3: empty point set");
  if (points.cols() != 3) throw std::invalid_argument("KdTree3: points must be [N,3]");
  std::vector<int> idx(points.rows());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points.rows());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree3::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = (lo + hi) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) { return pts_(a, axis) < pts_(b, axis); });
  Node node;
  node.axis = axis;
  node.point = idx[mid];
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  nodes_[self].left = build(idx, lo, mid, depth + 1);
  nodes_[self].right = build(idx, mid + 1, hi, depth + 1);
  return self;
}

void KdTree3::search(int node, const Eigen::Vector3d& q, double& best, int& best_idx) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const double d2 = (pts_.row(n.point).transpose() - q).squaredNorm();
  if (d2 < best) {
    best = d2;
    best_idx = n.point;
  }
  const double delta = q[n.axis] - pts_(n.point, n.axis);
  const int near = delta <= 0 ? n.left : n.right;
  const int far = delta <= 0 ? n.right : n.left;
  search(near, q, best, best_idx);
  if (delta * delta < best) search(far, q, best, best_idx);
}

std::pair<double, int> KdTree3::nearest(const Eigen::Vector3d& q) const {
  double best = std::numeric_limits<double>::infinity();
  int best_idx = -1;
  search(root_, q, best, best_idx);
  return {best, best_idx};
}

double chamfer(const Eigen::MatrixXd& points_a, const Eigen::MatrixXd& points_b) {
  if (points_a.rows() == 0 || points_b.rows() == 0) throw std::invalid_argument("chamfer: empty point set");
  const KdTree3 tree_a(points_a);
  const KdTree3 tree_b(points_b);
  double sum_a = 0.0;
  for (Eigen::Index i = 0; i < points_a.rows(); ++i) sum_a += std::sqrt(tree_b.nearest(points_a.row(i)).first);
  double sum_b = 0.0;
  for (Eigen::Index i = 0; i < points_b.rows(); ++i) sum_b += std::sqrt(tree_a.nearest(points_b.row(i)).first);
  return 0.5 * (sum_a / points_a.rows() + sum_b / points_b.rows());
}

Eigen::MatrixXd sample_mesh_surface(const TriangleMesh& mesh, int n_samples, std::uint64_t seed) {
  if (mesh.triangle_count() == 0) throw std::invalid_argument("sample_mesh_surface: empty mesh");
  if (n_samples < 1) throw std::invalid_argument("sample_mesh_surface: need n_samples >= 1");
  Eigen::VectorXd cdf(mesh.triangle_count());
  double acc = 0.0;
  for (Eigen::Index t = 0; t < mesh.triangles.rows(); ++t) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.triangles(t, 0));
    const Eigen::Vector3d b = mesh.vertices.row(mesh.triangles(t, 1));
    const Eigen::Vector3d c = mesh.vertices.row(mesh.triangles(t, 2));
    acc += 0.5 * (b - a).cross(c - a).norm();
    cdf[t] = acc;
  }
  if (acc <= 0.0) throw std::invalid_argument("sample_mesh_surface: zero total area");
  Rng rng(Rng::mix(seed, 0x6d657368ull));
  Eigen::MatrixXd out(n_samples, 3);
  for (int i = 0; i < n_samples; ++i) {
    const double u = rng.uniform01() * acc;
    const int t = static_cast<int>(std::lower_bound(cdf.data(), cdf.data() + cdf.size(), u) - cdf.data());
    const Eigen::Vector3d a = mesh.vertices.row(mesh.triangles(t, 0));
    const Eigen::Vector3d b = mesh.vertices.row(mesh.triangles(t, 1));
    const Eigen::Vector3d c = mesh.vertices.row(mesh.triangles(t, 2));
    double r1 = std::sqrt(rng.uniform01());
    double r2 = rng.uniform01();
    out.row(i) = ((1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c).transpose();
  }
  return out;
}

double normal_mae(const Eigen::MatrixXd& normals_pred, const Eigen::MatrixXd& normals_gt,
                  const std::vector<char>& mask) {
  if (normals_pred.rows() != normals_gt.rows() || normals_pred.cols() != 3 || normals_gt.cols() != 3)
    throw std::invalid_argument("normal_mae: shape mismatch");
  if (static_cast<Eigen::Index>(mask.size()) != normals_pred.rows())
    throw std::invalid_argument("normal_mae: mask size mismatch");
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < normals_pred.rows(); ++i) {
    if (!mask[i]) continue;
    const double dot = std::clamp(normals_pred.row(i).dot(normals_gt.row(i)), -1.0, 1.0);
    sum += std::acos(dot);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("normal_mae: empty mask");
  return sum / count * 180.0 / M_PI;
}

}  // namespace anisdf
