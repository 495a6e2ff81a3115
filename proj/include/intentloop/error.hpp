#ifndef INTENTLOOP_ERROR_HPP
#define INTENTLOOP_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace intentloop {

enum class ErrorCode {
    MalformedLabel,
    ZeroNorm,
    DimensionMismatch,
    NumericalOverflow,
    EmptyMixture,
    TooFewPoints,
    EmptyInput,
    UnknownId,
    OracleUnavailable,
    UnparseableResponse,
    NoCandidates,
    EmptyCorpus,
    IndexOutOfRange,
    MissingLabel,
    MissingGoldLabel,
    EmptyCluster,
    LengthMismatch,
    ParseError,
    DuplicateId,
    ShapeMismatch,
    EndpointUnavailable,
    ConfigError,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code; the
/// CLI maps codes to exit statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace intentloop

#endif  // INTENTLOOP_ERROR_HPP
