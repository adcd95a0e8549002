#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>

#include "anisdf/params.hpp"

namespace anisdf {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Self-contained training snapshot. The container is binary little-endian:
// magic "ANISDFCK", format version, step/seed/version counters, the effective
// config text, a grid signature, every parameter (id, shape, float64 values),
// the optimizer moments, and a trailing CRC32 of everything before it.
struct Checkpoint {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t store_version = 0;
  std::string config_text;
  std::string grid_signature;
  ParameterStore store;
  std::map<std::string, Eigen::VectorXd> adam_m, adam_v;
  std::uint64_t adam_t = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
// Throws CheckpointError on bad magic, version mismatch, truncation or CRC failure.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace anisdf
