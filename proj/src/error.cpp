#include "calypso/error.hpp"

namespace calypso {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::OffDiagonalOverflow: return "OffDiagonalOverflow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownLevel: return "UnknownLevel";
    case ErrorCode::DegenerateTruth: return "DegenerateTruth";
    case ErrorCode::ParamCoverage: return "ParamCoverage";
    case ErrorCode::NegativeSeed: return "NegativeSeed";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::UnknownRegion: return "UnknownRegion";
    case ErrorCode::SeedExceedsPopulation: return "SeedExceedsPopulation";
    case ErrorCode::WindowMismatch: return "WindowMismatch";
    case ErrorCode::HorizonZero: return "HorizonZero";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::KExceedsNoisySet: return "KExceedsNoisySet";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::TapeMismatch: return "TapeMismatch";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DivergedGradient: return "DivergedGradient";
    case ErrorCode::CollapsedEnsemble: return "CollapsedEnsemble";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::Usage: return "Usage";
    }
    return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::Usage:
        return ErrorCategory::Usage;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DivergedGradient:
    case ErrorCode::CollapsedEnsemble:
    case ErrorCode::InvariantViolation:
        return ErrorCategory::Numerical;
    default:
        return ErrorCategory::Data;
    }
}

} // namespace calypso
