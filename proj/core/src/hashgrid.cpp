#include "anisdf/hashgrid.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>

namespace anisdf {

void GridConfig::validate() const {
  if (!(coarse_min < level_m && level_m < level_L && level_L <= total_levels))
    throw std::invalid_argument("GridConfig: need coarse_min < m < L <= total_levels");
  if (coarse_min < 1) throw std::invalid_argument("GridConfig: coarse_min must be >= 1");
  if (base_resolution >= max_resolution) throw std::invalid_argument("GridConfig: need base < max resolution");
  if (features_per_level < 1) throw std::invalid_argument("GridConfig: features_per_level must be >= 1");
  if (table_size < 8) throw std::invalid_argument("GridConfig: table_size too small");
  for (int k = 0; k < 3; ++k)
    if (!(aabb_min[k] < aabb_max[k])) throw std::invalid_argument("GridConfig: empty AABB");
}

std::string GridConfig::signature() const {
  std::ostringstream os;
  os << "L" << total_levels << ":" << coarse_min << "-" << level_m << "-" << level_L << " N" << base_resolution << "-"
     << max_resolution << " F" << features_per_level << " T" << table_size;
  return os.str();
}

int level_resolution(int level, const GridConfig& cfg) {
  if (level < 1 || level > cfg.total_levels) throw std::out_of_range("level_resolution: level out of range");
  if (level == 1) return cfg.base_resolution;
  if (level == cfg.total_levels) return cfg.max_resolution;
  const double b = std::exp(std::log(static_cast<double>(cfg.max_resolution) / cfg.base_resolution) /
                            static_cast<double>(cfg.total_levels - 1));
  return static_cast<int>(std::floor(cfg.base_resolution * std::pow(b, level - 1) + 0.5));
}

bool level_is_dense(int level, const GridConfig& cfg) {
  const std::int64_t n = level_resolution(level, cfg) + 1;
  return n * n * n <= cfg.table_size;
}

int hash_index(const Eigen::Vector3i& cell, int level, const GridConfig& cfg) {
  const int n = level_resolution(level, cfg) + 1;
  if (static_cast<std::int64_t>(n) * n * n <= cfg.table_size) {
    return cell.x() + n * (cell.y() + n * cell.z());
  }
  const std::uint32_t h = static_cast<std::uint32_t>(cell.x()) * 1u ^
                          static_cast<std::uint32_t>(cell.y()) * 2654435761u ^
                          static_cast<std::uint32_t>(cell.z()) * 805459861u;
  return static_cast<int>(h % static_cast<std::uint32_t>(cfg.table_size));
}

HashGrid::HashGrid(GridConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::string HashGrid::table_id(int level) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "grid.level%02d", level);
  return buf;
}

int HashGrid::table_entries(int level) const {
  const std::int64_t n = level_resolution(level, cfg_) + 1;
  return static_cast<int>(std::min<std::int64_t>(n * n * n, cfg_.table_size));
}

void HashGrid::register_params(ParameterStore& store, Rng& rng, double init_scale) const {
  for (int l = cfg_.coarse_min; l <= cfg_.level_L; ++l) {
    Parameter& p = store.create(table_id(l), {table_entries(l), cfg_.features_per_level});
    for (Eigen::Index k = 0; k < p.values.size(); ++k) p.values[k] = rng.uniform(-init_scale, init_scale);
  }
}

Eigen::MatrixXd HashGrid::to_unit(const Eigen::MatrixXd& world_pts, int* clamped) const {
  Eigen::MatrixXd unit(world_pts.rows(), 3);
  int bad = 0;
  for (Eigen::Index r = 0; r < world_pts.rows(); ++r) {
    bool out = false;
    for (int k = 0; k < 3; ++k) {
      double u = (world_pts(r, k) - cfg_.aabb_min[k]) / (cfg_.aabb_max[k] - cfg_.aabb_min[k]);
      if (u < 0.0 || u > 1.0) {
        out = true;
        u = std::clamp(u, 0.0, 1.0);
      }
      unit(r, k) = u;
    }
    if (out) ++bad;
  }
  if (clamped) *clamped = bad;
  return unit;
}

ad::Var HashGrid::encode_level(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, int level,
                               std::array<ad::Var, 3>* d_world) const {
  const Eigen::Index S = unit_pts.rows();
  const int N = level_resolution(level, cfg_);
  Eigen::MatrixXi idx(S, 8);
  ad::Mat w(S, 8);
  std::array<ad::Mat, 3> dw;
  if (d_world)
    for (auto& m : dw) m.resize(S, 8);

  // d(unit)/d(world) per axis, times lattice resolution.
  Eigen::Vector3d scale;
  for (int k = 0; k < 3; ++k) scale[k] = static_cast<double>(N) / (cfg_.aabb_max[k] - cfg_.aabb_min[k]);

  for (Eigen::Index r = 0; r < S; ++r) {
    Eigen::Vector3i base;
    Eigen::Vector3d f;
    for (int k = 0; k < 3; ++k) {
      const double u = std::clamp(unit_pts(r, k), 0.0, 1.0) * N;
      int i = static_cast<int>(std::floor(u));
      i = std::min(i, N - 1);
      base[k] = i;
      f[k] = u - i;
    }
    for (int c = 0; c < 8; ++c) {
      const int cx = c & 1, cy = (c >> 1) & 1, cz = (c >> 2) & 1;
      Eigen::Vector3i corner(base.x() + cx, base.y() + cy, base.z() + cz);
      idx(r, c) = hash_index(corner, level, cfg_);
      const double wx = cx ? f.x() : 1.0 - f.x();
      const double wy = cy ? f.y() : 1.0 - f.y();
      const double wz = cz ? f.z() : 1.0 - f.z();
      w(r, c) = wx * wy * wz;
      if (d_world) {
        dw[0](r, c) = (cx ? 1.0 : -1.0) * wy * wz * scale[0];
        dw[1](r, c) = (cy ? 1.0 : -1.0) * wx * wz * scale[1];
        dw[2](r, c) = (cz ? 1.0 : -1.0) * wx * wy * scale[2];
      }
    }
  }

  ad::Var table = tape.param(table_id(level));
  ad::Var feat = ad::weighted_gather(table, idx, std::move(w));
  if (d_world)
    for (int k = 0; k < 3; ++k) (*d_world)[k] = ad::weighted_gather(table, idx, std::move(dw[k]));
  return feat;
}

ad::Var HashGrid::encode_range(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, int lo, int hi,
                               std::array<ad::Var, 3>* d_world) const {
  if (lo < cfg_.coarse_min || hi > cfg_.level_L || lo > hi) throw std::out_of_range("encode_range: bad level range");
  std::vector<ad::Var> feats;
  std::array<std::vector<ad::Var>, 3> tangs;
  for (int l = lo; l <= hi; ++l) {
    std::array<ad::Var, 3> dl;
    feats.push_back(encode_level(tape, unit_pts, l, d_world ? &dl : nullptr));
    if (d_world)
      for (int k = 0; k < 3; ++k) tangs[k].push_back(dl[k]);
  }
  if (d_world)
    for (int k = 0; k < 3; ++k) (*d_world)[k] = ad::concat_cols(tangs[k]);
  return ad::concat_cols(feats);
}

ad::Var HashGrid::encode_coarse(ad::Tape& tape, const Eigen::MatrixXd& unit_pts,
                                std::array<ad::Var, 3>* d_world) const {
  return encode_range(tape, unit_pts, cfg_.coarse_min, cfg_.level_m, d_world);
}

ad::Var HashGrid::encode_fine(ad::Tape& tape, const Eigen::MatrixXd& unit_pts, std::array<ad::Var, 3>* d_world) const {
  return encode_range(tape, unit_pts, cfg_.level_m, cfg_.level_L, d_world);
}

double HashGrid::lattice_margin(const Eigen::MatrixXd& unit_pts, int lo, int hi) const {
  double margin = std::numeric_limits<double>::infinity();
  for (int l = lo; l <= hi; ++l) {
    const int N = level_resolution(l, cfg_);
    for (Eigen::Index r = 0; r < unit_pts.rows(); ++r)
      for (int k = 0; k < 3; ++k) {
        const double u = unit_pts(r, k) * N;
        margin = std::min(margin, std::abs(u - std::round(u)) / N);
      }
  }
  return margin;
}

}  // namespace anisdf
