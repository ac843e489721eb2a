#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace diffrisk {

/// Base of every error raised by the library. Catch this at tool boundaries.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// topology
class DisconnectedGraph : public Error {
 public:
  using Error::Error;
};
class InvalidAdjacency : public Error {
 public:
  using Error::Error;
};
class AsymmetricAdjacency : public InvalidAdjacency {
 public:
  using InvalidAdjacency::InvalidAdjacency;
};
class MissingSelfLoop : public InvalidAdjacency {
 public:
  using InvalidAdjacency::InvalidAdjacency;
};
class DegenerateNeighborhood : public Error {
 public:
  using Error::Error;
};
class StochasticityViolation : public Error {
 public:
  using Error::Error;
};

// risk
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};
class NoMomentsAvailable : public Error {
 public:
  using Error::Error;
};
class UnboundedFeatures : public Error {
 public:
  using Error::Error;
};
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double final_gradient_norm)
      : Error(what), final_gradient_norm_(final_gradient_norm) {}
  double final_gradient_norm() const noexcept { return final_gradient_norm_; }

 private:
  double final_gradient_norm_;
};

// drift
class TickBeyondHorizon : public Error {
 public:
  using Error::Error;
};

// engine
class Divergence : public Error {
 public:
  Divergence(const std::string& what, std::size_t node, std::size_t time, double step_size)
      : Error(what), node_(node), time_(time), step_size_(step_size) {}
  std::size_t node() const noexcept { return node_; }
  std::size_t time() const noexcept { return time_; }
  double step_size() const noexcept { return step_size_; }

 private:
  std::size_t node_;
  std::size_t time_;
  double step_size_;
};

// metrics
class EmptyEvalBatch : public Error {
 public:
  using Error::Error;
};
class SingleClassBatch : public Error {
 public:
  using Error::Error;
};
class MissingHessian : public Error {
 public:
  using Error::Error;
};

// theory
class MissingNodeIndex : public Error {
 public:
  using Error::Error;
};
class UnstableB : public Error {
 public:
  UnstableB(const std::string& what, double spectral_radius)
      : Error(what), spectral_radius_(spectral_radius) {}
  double spectral_radius() const noexcept { return spectral_radius_; }

 private:
  double spectral_radius_;
};
class ZeroNoise : public Error {
 public:
  using Error::Error;
};
class AssumptionViolation : public Error {
 public:
  using Error::Error;
};

// configuration and ingestion
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::string field)
      : Error(what), line_(line), field_(std::move(field)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};
class MalformedLine : public Error {
 public:
  MalformedLine(const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class LabelDomain : public Error {
 public:
  using Error::Error;
};

}  // namespace diffrisk
