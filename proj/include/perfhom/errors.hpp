#pragma once

#include <stdexcept>
#include <string>

namespace perfhom {

// Error hierarchy. Validation-type errors (bad geometry, bad config) are
// distinguished from numerical failures so the CLI can map them to exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct GeometryError : Error {
    using Error::Error;
};
struct MeshError : Error {
    using Error::Error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct AssemblyError : Error {
    using Error::Error;
};
struct SolverError : Error {
    using Error::Error;
};
struct ConvergenceError : SolverError {
    double final_residual = 0.0;
    ConvergenceError(const std::string& msg, double res)
        : SolverError(msg), final_residual(res) {}
};
struct SingularSystemError : SolverError {
    using SolverError::SolverError;
};
struct GridMismatchError : Error {
    using Error::Error;
};
struct InsufficientBurnInError : Error {
    using Error::Error;
};
struct MissingArtifactError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

} // namespace perfhom
