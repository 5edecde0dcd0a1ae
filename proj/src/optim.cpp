#include "pacdiff/optim.hpp"

#include <cmath>

#include "pacdiff/errors.hpp"

namespace pacdiff {

ParamStore::ParamStore(TensorMap values) {
  for (auto& [name, t] : values) add(name, std::move(t));
}

void ParamStore::add(std::string name, Tensor value) {
  if (values_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  m_.emplace(name, Tensor::Zero(value.rows(), value.cols()));
  v_.emplace(name, Tensor::Zero(value.rows(), value.cols()));
  values_.emplace(std::move(name), std::move(value));
}

bool ParamStore::contains(std::string_view name) const {
  return values_.find(name) != values_.end();
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamStore::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

Eigen::Index ParamStore::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& [_, t] : values_) n += t.size();
  return n;
}

void ParamStore::reset_optimizer() {
  for (auto& [_, t] : m_) t.setZero();
  for (auto& [_, t] : v_) t.setZero();
  step_ = 0;
}

bool ParamStore::operator==(const ParamStore& other) const {
  return values_ == other.values_ && m_ == other.m_ && v_ == other.v_ &&
         step_ == other.step_;
}

double global_norm(const TensorMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void adam_step(ParamStore& params, const TensorMap& grads, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ContractError("Adam learning rate must be positive");
  for (const auto& [name, value] : params.values_) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("missing gradient for parameter '" + name + "'");
    if (it->second.rows() != value.rows() || it->second.cols() != value.cols())
      throw ContractError("gradient shape mismatch for parameter '" + name + "'");
  }

  double scale = config.maximize ? -1.0 : 1.0;
  if (config.clip_norm) {
    const double norm = global_norm(grads);
    if (norm > *config.clip_norm) scale *= *config.clip_norm / norm;
  }

  ++params.step_;
  const double t = double(params.step_);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, value] : params.values_) {
    const Tensor g = scale * grads.find(name)->second;
    Tensor& m = params.m_.find(name)->second;
    Tensor& v = params.v_.find(name)->second;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    value.array() -= config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

TensorMap merge(const TensorMap& a, const TensorMap& b) {
  TensorMap out = a;
  for (const auto& [name, t] : b) {
    if (!out.emplace(name, t).second)
      throw ContractError("duplicate tensor name '" + name + "' in merge");
  }
  return out;
}

}  // namespace pacdiff
