#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "pacdiff/tensor.hpp"

namespace pacdiff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool maximize = false;
  // Rescales the gradient to this global L2 norm when exceeded. Off by default.
  std::optional<double> clip_norm;
};

// Named parameters plus the Adam state of the single optimizer that owns them.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(TensorMap values);

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const TensorMap& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  Eigen::Index scalar_count() const;

  std::int64_t step() const { return step_; }
  const TensorMap& first_moment() const { return m_; }
  const TensorMap& second_moment() const { return v_; }
  void reset_optimizer();

  friend void adam_step(ParamStore& params, const TensorMap& grads,
                        const AdamConfig& config);

  bool operator==(const ParamStore& other) const;

 private:
  TensorMap values_;
  TensorMap m_;
  TensorMap v_;
  std::int64_t step_ = 0;
};

/// Bias-corrected Adam update of every parameter. Throws ContractError if a
/// parameter has no gradient or the shapes differ.
void adam_step(ParamStore& params, const TensorMap& grads, const AdamConfig& config);

double global_norm(const TensorMap& grads);

/// Union of two maps; duplicate names are a contract violation.
TensorMap merge(const TensorMap& a, const TensorMap& b);

}  // namespace pacdiff
