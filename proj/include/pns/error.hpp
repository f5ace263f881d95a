#pragma once

#include <stdexcept>
#include <string>

namespace pns {

enum class ErrorCode {
    invalid_argument,
    shape_mismatch,
    io,
    manifest,
    config,
    numeric,
    unsupported,
    internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    const char* code_name() const noexcept { return error_code_name(code_); }

private:
    ErrorCode code_;
};

} // namespace pns
