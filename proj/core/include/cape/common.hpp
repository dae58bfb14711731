#pragma once

#include <stdexcept>
#include <string>

namespace cape {

/// Error type thrown on any contract violation or I/O failure. Messages
/// start with a short kind token ("bad-magic", "too-short", ...) followed
/// by context.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

} // namespace cape
