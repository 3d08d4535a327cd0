#pragma once

#include <stdexcept>
#include <string>

namespace prop {

enum class ErrorKind { Config, Numeric, Io, Logic };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    // Exit codes used by the CLI: 0 success, then one per failure family.
    int exit_code() const {
        switch (kind_) {
            case ErrorKind::Config: return 2;
            case ErrorKind::Numeric: return 3;
            case ErrorKind::Io: return 4;
            case ErrorKind::Logic: return 5;
        }
        return 1;
    }

private:
    ErrorKind kind_;
};

} // namespace prop
