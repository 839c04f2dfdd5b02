#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mia {

enum class ErrorCode {
    invalid_config,
    invalid_argument,
    transport_error,
    rate_limited,
    empty_completion,
    missing_binding,
    dimension_mismatch,
    duplicate_id,
    not_found,
    zero_vector,
    parse_failure,
    non_finite,
    schema_mismatch,
    missing_span,
    layout_mismatch,
    upstream_missing,
    io_error,
    invariant_violation,
    divergence,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace mia
