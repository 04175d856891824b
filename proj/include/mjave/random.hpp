#pragma once

// Seeded initialization helpers. All randomness in the project flows through
// std::mt19937_64 so that a seed fully determines every downstream byte.
// Values are drawn in double precision and cast once, which keeps float and
// double runs aligned to within rounding.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mjave/tensor.hpp"

namespace mjave {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> normal_init(std::size_t rows, std::size_t cols, Rng& rng,
                      double stddev, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(rows, cols, std::move(data), requires_grad);
}

// Xavier/Glorot uniform over [-sqrt(6/(fan_in+fan_out)), +...].
template <typename T>
Tensor<T> xavier_init(std::size_t rows, std::size_t cols, Rng& rng,
                      std::size_t fan_in, std::size_t fan_out,
                      bool requires_grad = true) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(rows, cols, std::move(data), requires_grad);
}

template <typename T>
Tensor<T> zeros(std::size_t rows, std::size_t cols, bool requires_grad = true) {
  return Tensor<T>(rows, cols, T(0), requires_grad);
}

template <typename T>
Tensor<T> ones(std::size_t rows, std::size_t cols, bool requires_grad = true) {
  return Tensor<T>(rows, cols, T(1), requires_grad);
}

}  // namespace mjave
