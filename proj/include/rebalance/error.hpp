#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rebalance {

enum class ErrorCode {
    InvalidArgument,
    EmptyTable,
    DuplicateId,
    UnknownColumn,
    NonPositiveWeight,
    NoCommonCovariates,
    KindMismatch,
    AllZeroWeights,
    NoNumericValues,
    UnknownCovariate,
    FormulaSyntax,
    DroppedCovariate,
    DimensionMismatch,
    TooFewPerClass,
    SingleClass,
    EmptyTargetCell,
    EmptySampleCell,
    PositivityViolation,
    DeBoundInfeasible,
    SingularJacobian,
    AllMissing,
    NoOutcomes,
    UnknownVariable,
    DegenerateVariable,
    MalformedCsv,
    MissingFile,
    IdMismatch,
    Io,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyTable: return "EmptyTable";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::UnknownColumn: return "UnknownColumn";
        case ErrorCode::NonPositiveWeight: return "NonPositiveWeight";
        case ErrorCode::NoCommonCovariates: return "NoCommonCovariates";
        case ErrorCode::KindMismatch: return "KindMismatch";
        case ErrorCode::AllZeroWeights: return "AllZeroWeights";
        case ErrorCode::NoNumericValues: return "NoNumericValues";
        case ErrorCode::UnknownCovariate: return "UnknownCovariate";
        case ErrorCode::FormulaSyntax: return "FormulaSyntax";
        case ErrorCode::DroppedCovariate: return "DroppedCovariate";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::TooFewPerClass: return "TooFewPerClass";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::EmptyTargetCell: return "EmptyTargetCell";
        case ErrorCode::EmptySampleCell: return "EmptySampleCell";
        case ErrorCode::PositivityViolation: return "PositivityViolation";
        case ErrorCode::DeBoundInfeasible: return "DeBoundInfeasible";
        case ErrorCode::SingularJacobian: return "SingularJacobian";
        case ErrorCode::AllMissing: return "AllMissing";
        case ErrorCode::NoOutcomes: return "NoOutcomes";
        case ErrorCode::UnknownVariable: return "UnknownVariable";
        case ErrorCode::DegenerateVariable: return "DegenerateVariable";
        case ErrorCode::MalformedCsv: return "MalformedCsv";
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::IdMismatch: return "IdMismatch";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace rebalance
