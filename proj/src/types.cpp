#include "diffrisk/types.hpp"

#include "diffrisk/error.hpp"

namespace diffrisk {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = parent + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Dataset Dataset::uniform(Matrix features, Vector labels) {
  if (features.cols() != labels.size()) {
    throw DimensionMismatch("dataset: feature columns and label count differ");
  }
  Dataset d;
  const auto n = labels.size();
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.weights = n > 0 ? Vector::Constant(n, 1.0 / static_cast<double>(n)) : Vector();
  return d;
}

Dataset Dataset::from_samples(const std::vector<Sample>& samples) {
  if (samples.empty()) {
    return Dataset{};
  }
  const auto dim = samples.front().features.size();
  Matrix features(dim, static_cast<Eigen::Index>(samples.size()));
  Vector labels(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (samples[j].features.size() != dim) {
      throw DimensionMismatch("dataset: feature dimension changes within the sample list");
    }
    features.col(static_cast<Eigen::Index>(j)) = samples[j].features;
    labels(static_cast<Eigen::Index>(j)) = samples[j].label;
  }
  return uniform(std::move(features), std::move(labels));
}

std::vector<Sample> Dataset::to_samples() const {
  std::vector<Sample> out;
  out.reserve(size());
  for (std::size_t j = 0; j < size(); ++j) {
    out.push_back(sample(j));
  }
  return out;
}

Sample Dataset::sample(std::size_t j) const {
  const auto c = static_cast<Eigen::Index>(j);
  return Sample{features.col(c), labels(c)};
}

}  // namespace diffrisk
