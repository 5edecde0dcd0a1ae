#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace pacdiff {

// Dense 2-D tensor of 64-bit floats. Rows index the batch, columns features;
// scalars are 1x1. The shape invariant (rows*cols == size) is Eigen's.
using Tensor = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Ordered by name so iteration (optimizer updates, serialization) is
// deterministic.
using TensorMap = std::map<std::string, Tensor, std::less<>>;

using Rng = std::mt19937_64;

inline Tensor scalar_tensor(double v) { return Tensor::Constant(1, 1, v); }

inline std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Tensor standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(rows, cols);
  // Row-major fill order so a row's draws are contiguous in the stream.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  return out;
}

}  // namespace pacdiff
