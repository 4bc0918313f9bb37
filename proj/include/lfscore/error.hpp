#pragma once

#include <stdexcept>
#include <string>

namespace lfs {

enum class ErrorKind { InvalidArgument, Data, Numerical };

// code is a short machine-readable tag ("singular_design", "infeasible", ...)
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& msg)
        : std::runtime_error(msg), kind_(kind), code_(std::move(code)) {}
    ErrorKind kind() const { return kind_; }
    const std::string& code() const { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& code, const std::string& msg) {
    throw Error(kind, code, msg);
}

[[noreturn]] inline void invalid(const std::string& msg) {
    throw Error(ErrorKind::InvalidArgument, "invalid_argument", msg);
}

}  // namespace lfs
