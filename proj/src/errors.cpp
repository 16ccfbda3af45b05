#include "vrmon/errors.hpp"

namespace vrmon {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedGlobalHeader: return "MALFORMED_GLOBAL_HEADER";
    case ErrorCode::UnsupportedLinkType: return "UNSUPPORTED_LINK_TYPE";
    case ErrorCode::TruncatedFrame: return "TRUNCATED_FRAME";
    case ErrorCode::TableCapacityExceeded: return "TABLE_CAPACITY_EXCEEDED";
    case ErrorCode::NoPrimaryFlows: return "NO_PRIMARY_FLOWS";
    case ErrorCode::InconsistentPrefixOrder: return "INCONSISTENT_PREFIX_ORDER";
    case ErrorCode::AmbiguousSignature: return "AMBIGUOUS_SIGNATURE";
    case ErrorCode::SchemaMismatch: return "SCHEMA_MISMATCH";
    case ErrorCode::CorruptModel: return "CORRUPT_MODEL";
    case ErrorCode::EmptyDataset: return "EMPTY_DATASET";
    case ErrorCode::InsufficientSamples: return "INSUFFICIENT_SAMPLES";
    case ErrorCode::FeatureDimMismatch: return "FEATURE_DIM_MISMATCH";
    case ErrorCode::UnknownStateForApp: return "UNKNOWN_STATE_FOR_APP";
    case ErrorCode::SidecarMismatch: return "SIDECAR_MISMATCH";
    case ErrorCode::BadAsMap: return "BAD_AS_MAP";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    }
    return "UNKNOWN";
}

} // namespace vrmon
