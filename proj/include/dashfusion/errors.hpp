#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dashfusion {

/// Incompatible tensor shapes or out-of-range indexing.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid model / training / generator configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk container or manifest.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CRC mismatch while reading a tensor container.
class ChecksumError : public FormatError {
public:
    ChecksumError(const std::string& file, std::uint32_t expected, std::uint32_t actual)
        : FormatError("checksum mismatch in " + file + ": expected " + std::to_string(expected) +
                      ", got " + std::to_string(actual)),
          file_(file) {}

    const std::string& file() const noexcept { return file_; }

private:
    std::string file_;
};

}  // namespace dashfusion
