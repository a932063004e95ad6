#pragma once

#include <cstdint>
#include <random>

#include "perturbvamp/types.hpp"

namespace pvamp {

/// Mixes a base seed with a stream tag so that derived generators are
/// decorrelated even when base seeds are consecutive (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename Scalar>
VecX<Scalar> gaussian_vector(Index n, Scalar stddev, std::uint64_t seed) {
  VecX<Scalar> v(n);
  std::mt19937_64 gen(seed);
  std::normal_distribution<Scalar> dist(Scalar(0), Scalar(1));
  for (Index i = 0; i < n; ++i) v[i] = stddev * dist(gen);
  return v;
}

template <typename Scalar>
MatX<Scalar> gaussian_matrix(Index rows, Index cols, Scalar stddev, std::uint64_t seed) {
  MatX<Scalar> m(rows, cols);
  std::mt19937_64 gen(seed);
  std::normal_distribution<Scalar> dist(Scalar(0), Scalar(1));
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = stddev * dist(gen);
  return m;
}

}  // namespace pvamp
