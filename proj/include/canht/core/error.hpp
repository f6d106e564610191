#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace canht {

// Error taxonomy shared by the library and the command-line tool.
// The tool maps these onto process exit codes: config 2, numeric 3, data 4.

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary/JSON payloads. Carries the byte offset at which decoding
// failed so the message pinpoints the corruption.
class parse_error : public data_error {
 public:
  parse_error(std::uint64_t offset, const std::string& what)
      : data_error("parse error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace canht
