#include "anisdf/meshing.hpp"

#include <Eigen/Geometry>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "anisdf/image.hpp"  // IoError
#include "anisdf/parallel.hpp"
#include "mc_tables.hpp"

namespace anisdf {

ScalarGrid sample_grid(const FieldFn& field, int resolution, const Eigen::Vector3d& aabb_min,
                       const Eigen::Vector3d& aabb_max, int threads) {
  if (resolution < 2) throw std::invalid_argument("sample_grid: resolution must be >= 2");
  ScalarGrid grid;
  grid.resolution = resolution;
  grid.aabb_min = aabb_min;
  grid.aabb_max = aabb_max;
  grid.values.resize(static_cast<Eigen::Index>(resolution) * resolution * resolution);

  parallel_for(resolution, [&](int iz) {
    Eigen::MatrixXd slab(static_cast<Eigen::Index>(resolution) * resolution, 3);
    for (int iy = 0; iy < resolution; ++iy)
      for (int ix = 0; ix < resolution; ++ix) slab.row(ix + resolution * iy) = grid.point(ix, iy, iz).transpose();
    const Eigen::VectorXd v = field(slab);
    grid.values.segment(static_cast<Eigen::Index>(iz) * resolution * resolution, slab.rows()) = v;
  }, threads);
  return grid;
}

TriangleMesh marching_cubes(const ScalarGrid& grid, double iso) {
  if (grid.resolution < 2 || grid.values.size() == 0) throw std::invalid_argument("marching_cubes: bad grid");
  const int n = grid.resolution;

  // one vertex per crossed lattice edge; key = (corner index, axis)
  auto edge_key = [n](int ix, int iy, int iz, int axis) {
    return (static_cast<std::int64_t>(ix + n * (iy + static_cast<std::int64_t>(n) * iz)) << 2) | axis;
  };
  std::unordered_map<std::int64_t, int> edge_vertex;
  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<int, 3>> tris;

  auto corner_inside = [&](double v) { return v <= iso; };

  auto vertex_on_edge = [&](int ix, int iy, int iz, int corner_a, int corner_b) {
    int ax = ix + mc::kCornerOffset[corner_a][0];
    int ay = iy + mc::kCornerOffset[corner_a][1];
    int az = iz + mc::kCornerOffset[corner_a][2];
    int bx = ix + mc::kCornerOffset[corner_b][0];
    int by = iy + mc::kCornerOffset[corner_b][1];
    int bz = iz + mc::kCornerOffset[corner_b][2];
    // canonical direction: a holds the lower corner along the differing axis
    int axis = bx != ax ? 0 : (by != ay ? 1 : 2);
    if (bx < ax || by < ay || bz < az) {
      std::swap(ax, bx);
      std::swap(ay, by);
      std::swap(az, bz);
    }
    const std::int64_t key = edge_key(ax, ay, az, axis);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double fa = grid.value(ax, ay, az);
    const double fb = grid.value(bx, by, bz);
    double t = 0.5;
    if (std::abs(fb - fa) > 1e-300) t = (iso - fa) / (fb - fa);
    t = std::clamp(t, 0.0, 1.0);
    const Eigen::Vector3d p = grid.point(ax, ay, az) + t * (grid.point(bx, by, bz) - grid.point(ax, ay, az));
    const int id = static_cast<int>(verts.size());
    verts.push_back(p);
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int iz = 0; iz < n - 1; ++iz)
    for (int iy = 0; iy < n - 1; ++iy)
      for (int ix = 0; ix < n - 1; ++ix) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const double v =
              grid.value(ix + mc::kCornerOffset[c][0], iy + mc::kCornerOffset[c][1], iz + mc::kCornerOffset[c][2]);
          if (corner_inside(v)) cube |= 1 << c;
        }
        if (cube == 0 || cube == 255) continue;
        const int* row = mc::kTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          std::array<int, 3> tri;
          for (int k = 0; k < 3; ++k) {
            const int edge = row[t + k];
            tri[k] = vertex_on_edge(ix, iy, iz, mc::kEdgeVertices[edge][0], mc::kEdgeVertices[edge][1]);
          }
          if (tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2]) tris.push_back(tri);
        }
      }

  // drop zero-area slivers (ties at exact-zero corners can produce them)
  std::vector<std::array<int, 3>> kept;
  kept.reserve(tris.size());
  for (const auto& t : tris) {
    const Eigen::Vector3d a = verts[t[0]], b = verts[t[1]], c = verts[t[2]];
    if (0.5 * (b - a).cross(c - a).norm() > 1e-12) kept.push_back(t);
  }

  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  mesh.triangles.resize(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t i = 0; i < kept.size(); ++i)
    mesh.triangles.row(static_cast<Eigen::Index>(i)) << kept[i][0], kept[i][1], kept[i][2];

  // vertex normals from the grid's central-difference gradient
  mesh.normals.resize(mesh.vertices.rows(), 3);
  auto sample_trilinear_grad = [&](const Eigen::Vector3d& p) {
    Eigen::Vector3d g;
    for (int axis = 0; axis < 3; ++axis) {
      const double h = grid.spacing(axis);
      Eigen::Vector3d lo = p, hi = p;
      lo[axis] = std::max(p[axis] - h, grid.aabb_min[axis]);
      hi[axis] = std::min(p[axis] + h, grid.aabb_max[axis]);
      auto tri = [&](const Eigen::Vector3d& q) {
        Eigen::Vector3d u;
        for (int k = 0; k < 3; ++k)
          u[k] = std::clamp((q[k] - grid.aabb_min[k]) / grid.spacing(k), 0.0, static_cast<double>(n - 1));
        const int ix = std::min(static_cast<int>(u.x()), n - 2);
        const int iy = std::min(static_cast<int>(u.y()), n - 2);
        const int iz = std::min(static_cast<int>(u.z()), n - 2);
        const double fx = u.x() - ix, fy = u.y() - iy, fz = u.z() - iz;
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
          const int cx = c & 1, cy = (c >> 1) & 1, cz = (c >> 2) & 1;
          const double w = (cx ? fx : 1 - fx) * (cy ? fy : 1 - fy) * (cz ? fz : 1 - fz);
          acc += w * grid.value(ix + cx, iy + cy, iz + cz);
        }
        return acc;
      };
      g[axis] = (tri(hi) - tri(lo)) / std::max(hi[axis] - lo[axis], 1e-12);
    }
    return g;
  };
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    Eigen::Vector3d g = sample_trilinear_grad(mesh.vertices.row(i));
    mesh.normals.row(i) = (g.norm() > 1e-12 ? g.normalized() : Eigen::Vector3d(0, 0, 1)).transpose();
  }
  return mesh;
}

void export_mesh(const TriangleMesh& mesh, const std::string& path, const std::string& format) {
  if (format == "obj") {
    std::ofstream out(path);
    if (!out) throw IoError("export_mesh: cannot open " + path);
    out.precision(17);
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
      out << "v " << mesh.vertices(i, 0) << " " << mesh.vertices(i, 1) << " " << mesh.vertices(i, 2) << "\n";
    for (Eigen::Index i = 0; i < mesh.normals.rows(); ++i)
      out << "vn " << mesh.normals(i, 0) << " " << mesh.normals(i, 1) << " " << mesh.normals(i, 2) << "\n";
    const bool has_normals = mesh.normals.rows() == mesh.vertices.rows() && mesh.normals.rows() > 0;
    for (Eigen::Index i = 0; i < mesh.triangles.rows(); ++i) {
      const int a = mesh.triangles(i, 0) + 1, b = mesh.triangles(i, 1) + 1, c = mesh.triangles(i, 2) + 1;
      if (has_normals)
        out << "f " << a << "//" << a << " " << b << "//" << b << " " << c << "//" << c << "\n";
      else
        out << "f " << a << " " << b << " " << c << "\n";
    }
    if (!out) throw IoError("export_mesh: write failed for " + path);
    return;
  }
  if (format == "ply") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_mesh: cannot open " + path);
    const bool has_normals = mesh.normals.rows() == mesh.vertices.rows() && mesh.vertices.rows() > 0;
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << mesh.vertex_count() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (has_normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "element face " << mesh.triangle_count() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
      double row[6] = {mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2), 0, 0, 0};
      if (has_normals) {
        row[3] = mesh.normals(i, 0);
        row[4] = mesh.normals(i, 1);
        row[5] = mesh.normals(i, 2);
      }
      out.write(reinterpret_cast<const char*>(row), static_cast<std::streamsize>((has_normals ? 6 : 3) * 8));
    }
    for (Eigen::Index i = 0; i < mesh.triangles.rows(); ++i) {
      const unsigned char three = 3;
      const std::int32_t idx[3] = {mesh.triangles(i, 0), mesh.triangles(i, 1), mesh.triangles(i, 2)};
      out.write(reinterpret_cast<const char*>(&three), 1);
      out.write(reinterpret_cast<const char*>(idx), 12);
    }
    if (!out) throw IoError("export_mesh: write failed for " + path);
    return;
  }
  throw std::invalid_argument("export_mesh: format must be obj or ply");
}

namespace {

TriangleMesh import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("import_mesh: cannot open " + path);
  std::vector<Eigen::Vector3d> verts, normals;
  std::vector<std::array<int, 3>> tris;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d v;
      ls >> v.x() >> v.y() >> v.z();
      verts.push_back(v);
    } else if (tag == "vn") {
      Eigen::Vector3d v;
      ls >> v.x() >> v.y() >> v.z();
      normals.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int k = 0; k < 3; ++k) {
        std::string vert;
        ls >> vert;
        t[k] = std::stoi(vert.substr(0, vert.find('/'))) - 1;
      }
      tris.push_back(t);
    }
  }
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  if (normals.size() == verts.size()) {
    mesh.normals.resize(mesh.vertices.rows(), 3);
    for (std::size_t i = 0; i < normals.size(); ++i) mesh.normals.row(static_cast<Eigen::Index>(i)) = normals[i];
  }
  mesh.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    mesh.triangles.row(static_cast<Eigen::Index>(i)) << tris[i][0], tris[i][1], tris[i][2];
  return mesh;
}

TriangleMesh import_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("import_mesh: cannot open " + path);
  std::string line;
  int n_verts = -1, n_faces = -1, vert_props = 0;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tag == "element") {
      std::string what;
      int count;
      ls >> what >> count;
      if (what == "vertex") n_verts = count;
      if (what == "face") n_faces = count;
    } else if (tag == "property" && n_faces < 0) {
      ++vert_props;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!binary_le || n_verts < 0 || n_faces < 0 || vert_props < 3)
    throw IoError("import_mesh: unsupported ply layout in " + path);
  TriangleMesh mesh;
  mesh.vertices.resize(n_verts, 3);
  if (vert_props >= 6) mesh.normals.resize(n_verts, 3);
  std::vector<double> row(vert_props);
  for (int i = 0; i < n_verts; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(vert_props * 8));
    mesh.vertices.row(i) << row[0], row[1], row[2];
    if (vert_props >= 6) mesh.normals.row(i) << row[3], row[4], row[5];
  }
  mesh.triangles.resize(n_faces, 3);
  for (int i = 0; i < n_faces; ++i) {
    unsigned char cnt;
    in.read(reinterpret_cast<char*>(&cnt), 1);
    if (cnt != 3) throw IoError("import_mesh: non-triangle face in " + path);
    std::int32_t idx[3];
    in.read(reinterpret_cast<char*>(idx), 12);
    mesh.triangles.row(i) << idx[0], idx[1], idx[2];
  }
  if (!in) throw IoError("import_mesh: truncated ply " + path);
  return mesh;
}

}  // namespace

TriangleMesh import_mesh(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".obj") return import_obj(path);
  if (path.size() > 4 && path.substr(path.size() - 4) == ".ply") return import_ply(path);
  throw std::invalid_argument("import_mesh: unknown extension on " + path);
}

int count_components(const TriangleMesh& mesh, int min_triangles) {
  const int V = mesh.vertex_count();
  std::vector<int> parent(V);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (Eigen::Index t = 0; t < mesh.triangles.rows(); ++t) {
    const int a = find(mesh.triangles(t, 0));
    const int b = find(mesh.triangles(t, 1));
    const int c = find(mesh.triangles(t, 2));
    parent[b] = a;
    parent[find(c)] = a;
  }
  std::unordered_map<int, int> tri_count;
  for (Eigen::Index t = 0; t < mesh.triangles.rows(); ++t) ++tri_count[find(mesh.triangles(t, 0))];
  int components = 0;
  for (const auto& [root, count] : tri_count)
    if (count >= min_triangles) ++components;
  return components;
}

int boundary_edge_count(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (Eigen::Index t = 0; t < mesh.triangles.rows(); ++t)
    for (int k = 0; k < 3; ++k) {
      int a = mesh.triangles(t, k), b = mesh.triangles(t, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  int boundary = 0;
  for (const auto& [e, count] : edges)
    if (count == 1) ++boundary;
  return boundary;
}

}  // namespace anisdf
