#pragma once

#include <stdexcept>
#include <string>

namespace mosaic {

// Every module raises Error<Kind> with its own kind enum so callers can
// dispatch on the failure category without string matching.
template <typename Kind>
class Error : public std::runtime_error {
 public:
  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace mosaic
