#pragma once

#include <stdexcept>

namespace xvfg {

/// Unreadable or inconsistent input data (images, dataset layout).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed checkpoint: bad magic, version, truncation, duplicate names.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint whose trailing CRC32 does not match its contents.
class CrcError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace xvfg
