#pragma once

#include <stdexcept>
#include <string>

namespace mda::cli {

/// Bad flag combination or unparsable user value; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run(int argc, char** argv);

}  // namespace mda::cli
