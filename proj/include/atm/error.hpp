#pragma once

#include <stdexcept>
#include <string>

namespace atm {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  domain,        // math domain violation (log of non-positive, ...)
  numeric,       // NaN/Inf where finite values are required
  io,
  bad_magic,
  truncated,
  dim_overflow,
  config,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace atm
