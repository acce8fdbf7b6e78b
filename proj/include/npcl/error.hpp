#pragma once

#include <stdexcept>
#include <string>

namespace npcl {

// Error taxonomy. The CLI maps each family onto a process exit code:
// config_error -> 1, data_error -> 2, numeric_error -> 3.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or violated parameter precondition.
class config_error : public error {
 public:
  using error::error;
};

// Malformed or inconsistent input data: manifests, extraction, batches, IO.
class data_error : public error {
 public:
  using error::error;
};

// Non-finite values, non-normalized embeddings.
class numeric_error : public error {
 public:
  using error::error;
};

namespace detail {

template <typename Error>
inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

}  // namespace detail
}  // namespace npcl
