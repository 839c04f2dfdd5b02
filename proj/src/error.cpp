#include "mia/error.hpp"

namespace mia {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_config: return "invalid-config";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::transport_error: return "transport-error";
        case ErrorCode::rate_limited: return "rate-limited";
        case ErrorCode::empty_completion: return "empty-completion";
        case ErrorCode::missing_binding: return "missing-binding";
        case ErrorCode::dimension_mismatch: return "dimension-mismatch";
        case ErrorCode::duplicate_id: return "duplicate-id";
        case ErrorCode::not_found: return "not-found";
        case ErrorCode::zero_vector: return "zero-vector-result";
        case ErrorCode::parse_failure: return "parse-failure";
        case ErrorCode::non_finite: return "non-finite";
        case ErrorCode::schema_mismatch: return "schema-mismatch";
        case ErrorCode::missing_span: return "missing-span";
        case ErrorCode::layout_mismatch: return "span-layout-mismatch";
        case ErrorCode::upstream_missing: return "upstream-missing";
        case ErrorCode::io_error: return "io-error";
        case ErrorCode::invariant_violation: return "invariant-violation";
        case ErrorCode::divergence: return "divergence";
    }
    return "unknown";
}

}  // namespace mia
