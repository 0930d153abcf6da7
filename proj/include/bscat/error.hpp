#pragma once

#include <stdexcept>
#include <string>

namespace bscat {

// Numeric values are part of the C ABI (see bscat.h); do not renumber.
enum class ErrorCode : int {
    ok = 0,
    invalid_argument = 1,
    invalid_config = 2,
    size_mismatch = 3,
    non_finite_input = 4,
    cholesky_failure = 5,
    io_error = 6,
    checksum_mismatch = 7,
    config_digest_mismatch = 8,
    parse_error = 9,
    pool_exhausted = 10,
    too_few_rows = 11,
    internal = 12,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace bscat
