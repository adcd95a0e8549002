#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace anisdf {

struct ParamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One trainable tensor, stored flat (column-major for 2-D shapes).
struct Parameter {
  std::string id;
  std::vector<int> shape;
  Eigen::VectorXd values;

  int size() const { return static_cast<int>(values.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Eigen::Map<Eigen::MatrixXd> matrix() { return {values.data(), rows(), cols()}; }
  Eigen::Map<const Eigen::MatrixXd> matrix() const { return {values.data(), rows(), cols()}; }
};

// All trainable scalars of a model, addressable by stable string IDs.
// Iteration order is the sorted ID order, which fixes serialization and
// optimizer traversal order.
class ParameterStore {
 public:
  Parameter& create(const std::string& id, std::vector<int> shape) {
    if (params_.count(id)) throw ParamError("parameter id already exists: " + id);
    int n = 1;
    for (int d : shape) {
      if (d < 1) throw ParamError("non-positive dimension in shape of " + id);
      n *= d;
    }
    Parameter p;
    p.id = id;
    p.shape = std::move(shape);
    p.values = Eigen::VectorXd::Zero(n);
    return params_.emplace(id, std::move(p)).first->second;
  }

  bool contains(const std::string& id) const { return params_.count(id) != 0; }

  Parameter& at(const std::string& id) {
    auto it = params_.find(id);
    if (it == params_.end()) throw ParamError("missing parameter id: " + id);
    return it->second;
  }
  const Parameter& at(const std::string& id) const {
    auto it = params_.find(id);
    if (it == params_.end()) throw ParamError("missing parameter id: " + id);
    return it->second;
  }

  const std::map<std::string, Parameter>& all() const { return params_; }
  std::map<std::string, Parameter>& all() { return params_; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [id, p] : params_) out.push_back(id);
    return out;
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& [id, p] : params_) n += p.size();
    return n;
  }

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  bool all_finite() const {
    for (const auto& [id, p] : params_)
      if (!p.values.allFinite()) return false;
    return true;
  }

 private:
  std::map<std::string, Parameter> params_;
  std::uint64_t version_ = 0;
};

}  // namespace anisdf
