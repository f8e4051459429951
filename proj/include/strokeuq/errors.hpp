#pragma once

// Error types shared across the library. The CLI maps ValidationError to
// exit code 1 and IoError to exit code 2; everything else is a bug.

#include <stdexcept>
#include <string>

namespace strokeuq {

class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace strokeuq
