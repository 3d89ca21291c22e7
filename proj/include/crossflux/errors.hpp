#pragma once

#include <stdexcept>
#include <string>

namespace crossflux {

/// Malformed or inconsistent configuration input.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mesh file / geometry / admissibility problems.
struct MeshError : std::runtime_error {
  explicit MeshError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Linear or nonlinear solver failure.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A structural property of the scheme (bounds, entropy) was violated
/// beyond tolerance; indicates a defect, not a data issue.
struct StructureError : std::runtime_error {
  explicit StructureError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace crossflux
