#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace attrib {

// Every recoverable failure in the library is reported as an Error whose
// message is a single line suitable for a CLI diagnostic.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(concat(std::forward<Args>(args)...));
}

}  // namespace detail
}  // namespace attrib
