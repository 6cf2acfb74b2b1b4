#pragma once

#include <stdexcept>
#include <string>

namespace pdml {

// Error categories map onto CLI exit codes: argument -> 2, io -> 3, numeric -> 4.

class ArgumentError : public std::runtime_error {
public:
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pdml
