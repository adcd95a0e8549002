#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace anisdf {

// Batch scalar field: rows of the input are points, result one value each.
using FieldFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

// resolution^3 samples over the box, x-fastest ordering, corners inclusive.
struct ScalarGrid {
  int resolution = 0;
  Eigen::Vector3d aabb_min, aabb_max;
  Eigen::VectorXd values;

  double spacing(int axis) const { return (aabb_max[axis] - aabb_min[axis]) / (resolution - 1); }
  int index(int ix, int iy, int iz) const { return ix + resolution * (iy + resolution * iz); }
  double value(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
  Eigen::Vector3d point(int ix, int iy, int iz) const {
    return {aabb_min.x() + ix * spacing(0), aabb_min.y() + iy * spacing(1), aabb_min.z() + iz * spacing(2)};
  }
};

ScalarGrid sample_grid(const FieldFn& field, int resolution, const Eigen::Vector3d& aabb_min,
                       const Eigen::Vector3d& aabb_max, int threads = 0);

struct TriangleMesh {
  Eigen::MatrixXd vertices;   // [V,3]
  Eigen::MatrixXd normals;    // [V,3] unit, from the field gradient
  Eigen::MatrixXi triangles;  // [T,3]

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int triangle_count() const { return static_cast<int>(triangles.rows()); }
};

// Zero-level-set extraction with the 256-case table; vertices found by
// linear interpolation along lattice edges and welded through shared edge
// keys. Corners with value <= iso count as inside; degenerate triangles
// (area < 1e-12) are dropped. An empty surface yields an empty mesh.
TriangleMesh marching_cubes(const ScalarGrid& grid, double iso = 0.0);

// OBJ: ASCII v/vn/f, 1-indexed. PLY: binary little-endian.
void export_mesh(const TriangleMesh& mesh, const std::string& path, const std::string& format);
TriangleMesh import_mesh(const std::string& path);  // by extension

// Connected components with at least min_triangles triangles.
int count_components(const TriangleMesh& mesh, int min_triangles = 1);
// Edges referenced by exactly one triangle (0 for a watertight surface).
int boundary_edge_count(const TriangleMesh& mesh);

}  // namespace anisdf
