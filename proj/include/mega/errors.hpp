#pragma once

#include <stdexcept>
#include <string>

namespace mega {

/// Bad argument value (out-of-range threshold, zero-norm quaternion, ...).
class InvalidParameter : public std::invalid_argument {
public:
  explicit InvalidParameter(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Structural mismatch between components (layer widths, image shapes, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operation called in the wrong order (backward without a forward cache, ...).
class StateError : public std::logic_error {
public:
  explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

/// Filesystem / stream failure.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed dataset manifest.
class ManifestError : public std::runtime_error {
public:
  explicit ManifestError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Model archive failed to load. Kind distinguishes magic/version/CRC/payload faults.
class ArchiveError : public std::runtime_error {
public:
  enum class Kind { BadMagic, BadVersion, BadCrc, Corrupt };

  ArchiveError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

}  // namespace mega
