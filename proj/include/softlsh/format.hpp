#pragma once

#include <cstdio>
#include <string>

namespace softlsh {

/// Locale-independent, round-trippable decimal (17 significant digits).
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace softlsh
