#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace mmr::num {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;

// One named parameter matrix with its gradient accumulator.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

// Ordered collection of parameters. Order is creation order and is the
// serialization order: checkpoints are the concatenated column-major values
// as little-endian float32, plus a plain-text manifest of (name, rows, cols).
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  size_t total_size() const;

  void zero_grads();

  // Flat little-endian float32 image of all values, in store order.
  std::vector<float> flatten() const;
  void unflatten(const std::vector<float>& flat);

  // Manifest: one "name rows cols" line per parameter, in store order.
  std::string manifest() const;

  void save(const std::string& bin_path, const std::string& manifest_path) const;
  void load(const std::string& bin_path, const std::string& manifest_path);

  // Copies values (not grads) from another store with identical layout.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

}  // namespace mmr::num
