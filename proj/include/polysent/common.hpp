#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace polysent {

// Failure categories, mapped 1:1 onto CLI exit codes.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  training = 4,
  io = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct TrainError : Error {
  explicit TrainError(const std::string& w) : Error(ErrorKind::training, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

// 64-bit FNV-1a. Used for content hashes (cache keys, corpus/config hashes)
// and, salted, for n-gram feature hashing.
uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(uint64_t v);

// Escaping for single-line record fields: tab, newline, carriage return and
// backslash become \t, \n, \r, \\ so any text survives a line-oriented file.
std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view escaped);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace polysent
