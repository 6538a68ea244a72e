#pragma once

#include <fmt/format.h>

#include <stdexcept>

namespace nsrf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename... Args>
[[noreturn]] void fail(fmt::format_string<Args...> f, Args&&... args) {
  throw std::invalid_argument(fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace nsrf

#define NSRF_CHECK(cond, ...)        \
  do {                               \
    if (!(cond)) ::nsrf::fail(__VA_ARGS__); \
  } while (0)
