#include "gcoop/common.hpp"

namespace gcoop {

const char* error_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadUsage: return "BadUsage";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::EmptyGroup: return "EmptyGroup";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::InsufficientGroupSamples: return "InsufficientGroupSamples";
        case ErrorCode::SingleAttribute: return "SingleAttribute";
        case ErrorCode::EmptySet: return "EmptySet";
        case ErrorCode::UnsupportedAttrCount: return "UnsupportedAttrCount";
        case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::UnknownAttributes: return "UnknownAttributes";
        case ErrorCode::MissingGroupLabels: return "MissingGroupLabels";
        case ErrorCode::MissingTemplates: return "MissingTemplates";
        case ErrorCode::MissingLabels: return "MissingLabels";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::GradientCheckFailed: return "GradientCheckFailed";
    }
    return "UnknownError";
}

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadUsage:
        case ErrorCode::ConfigInvalid:
        case ErrorCode::DimensionTooSmall:
            return 2;
        case ErrorCode::NonFiniteEvaluation:
        case ErrorCode::NonFiniteLoss:
        case ErrorCode::GradientCheckFailed:
            return 4;
        default:
            return 3;
    }
}

uint64_t fnv1a64(std::string_view s, uint64_t seed) {
    uint64_t h = 14695981039346656037ull ^ (seed * 0x9E3779B97F4A7C15ull);
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace gcoop
