#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace calypso {

enum class ErrorCode {
    // data / contract errors
    OffDiagonalOverflow,
    ShapeMismatch,
    UnknownLevel,
    DegenerateTruth,
    ParamCoverage,
    NegativeSeed,
    UnknownTarget,
    UnknownRegion,
    SeedExceedsPopulation,
    WindowMismatch,
    HorizonZero,
    NonFiniteInput,
    EmptyCandidates,
    KExceedsNoisySet,
    InfeasibleSpec,
    InvalidArgument,
    IoError,
    ParseError,
    // autodiff misuse
    TapeMismatch,
    DivisionByZero,
    NonScalarRoot,
    // numerical aborts
    NonFiniteLoss,
    DivergedGradient,
    CollapsedEnsemble,
    // internal contract breaches
    InvariantViolation,
    // command line
    Usage,
};

enum class ErrorCategory { Usage, Data, Numerical };

std::string_view to_string(ErrorCode code) noexcept;
ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

} // namespace calypso
