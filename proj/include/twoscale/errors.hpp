#pragma once

#include <stdexcept>
#include <string>

namespace twoscale {

/// Failure category, used by the CLI to pick an exit code.
enum class ErrorClass {
  input,        // bad configuration or malformed data
  certificate,  // a numerical certificate (gap, definiteness, identity) failed
  numerical,    // an iteration did not converge or a solve broke down
};

class Error : public std::runtime_error {
 public:
  Error(std::string code, ErrorClass cls, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)), class_(cls) {}

  const std::string& code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return class_; }

 private:
  std::string code_;
  ErrorClass class_;
};

#define TWOSCALE_DEFINE_ERROR(Name, Class)                                              \
  class Name : public Error {                                                           \
   public:                                                                              \
    explicit Name(const std::string& what) : Error(#Name, ErrorClass::Class, what) {} \
  };

// coefficients
TWOSCALE_DEFINE_ERROR(InvalidArgument, input)
TWOSCALE_DEFINE_ERROR(CoercivityViolation, certificate)
TWOSCALE_DEFINE_ERROR(AsymmetryError, certificate)
TWOSCALE_DEFINE_ERROR(DerivativeUnavailable, numerical)

// cell problem
TWOSCALE_DEFINE_ERROR(DiscretizationTooCoarse, input)
TWOSCALE_DEFINE_ERROR(EigensolverFailure, numerical)
TWOSCALE_DEFINE_ERROR(DegenerateBand, certificate)
TWOSCALE_DEFINE_ERROR(SingularSolve, numerical)
TWOSCALE_DEFINE_ERROR(QuadratureInconsistency, certificate)

// band geometry
TWOSCALE_DEFINE_ERROR(NoConvergence, numerical)
TWOSCALE_DEFINE_ERROR(LeftSearchDomain, numerical)

// homogenization
TWOSCALE_DEFINE_ERROR(MissingCorrectors, input)
TWOSCALE_DEFINE_ERROR(IdentityViolation, certificate)

// solvers
TWOSCALE_DEFINE_ERROR(ResolutionError, input)
TWOSCALE_DEFINE_ERROR(CommensurabilityError, input)
TWOSCALE_DEFINE_ERROR(BoundaryContamination, certificate)
TWOSCALE_DEFINE_ERROR(LinearSolveFailure, numerical)
TWOSCALE_DEFINE_ERROR(NotPositiveDefinite, certificate)
TWOSCALE_DEFINE_ERROR(BoxTooSmall, certificate)
TWOSCALE_DEFINE_ERROR(WindowUnderflow, numerical)
TWOSCALE_DEFINE_ERROR(FrameMismatch, input)

// harness
TWOSCALE_DEFINE_ERROR(ConfigError, input)

#undef TWOSCALE_DEFINE_ERROR

}  // namespace twoscale
