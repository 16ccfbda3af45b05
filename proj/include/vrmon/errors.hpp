#pragma once

#include <stdexcept>
#include <string>

namespace vrmon {

enum class ErrorCode {
    MalformedGlobalHeader,
    UnsupportedLinkType,
    TruncatedFrame,
    TableCapacityExceeded,
    NoPrimaryFlows,
    InconsistentPrefixOrder,
    AmbiguousSignature,
    SchemaMismatch,
    CorruptModel,
    EmptyDataset,
    InsufficientSamples,
    FeatureDimMismatch,
    UnknownStateForApp,
    SidecarMismatch,
    BadAsMap,
    IoFailure,
    ConfigError,
};

const char* error_code_name(ErrorCode code);

// Carries a machine-checkable code alongside the human-readable message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

} // namespace vrmon
