#pragma once

#include <stdexcept>
#include <string>

namespace vispe {

// Error classes map one-to-one onto CLI exit codes (see tools/vispe_cli.cpp).

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dataset / checkpoint files that exist but cannot be trusted.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

void log_warning(const std::string& msg);
void set_warnings_enabled(bool enabled);

}  // namespace vispe
