#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace diffrisk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); equal arguments give equal sequences.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Child seed derived deterministically from a parent seed and an index.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// One labeled observation. Classification streams carry labels in {-1, +1};
/// the linear-regression (ADALINE) stream carries real-valued labels.
struct Sample {
  Vector features;
  double label = 0.0;
};

/// A weighted set of observations, one column per observation. Weights sum to one.
/// `exact` marks a finite population (expectations are exact, no sampling error).
struct Dataset {
  Matrix features;  // dim x count
  Vector labels;    // count
  Vector weights;   // count
  bool exact = false;

  std::size_t size() const { return static_cast<std::size_t>(labels.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.rows()); }
  bool empty() const { return labels.size() == 0; }

  static Dataset uniform(Matrix features, Vector labels);
  static Dataset from_samples(const std::vector<Sample>& samples);
  std::vector<Sample> to_samples() const;
  Sample sample(std::size_t j) const;
};

}  // namespace diffrisk
