#pragma once

#include <stdexcept>
#include <string>

namespace fogflow {

// Contract violation on user-facing input (bad file, bad config, shape mismatch).
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Training loss went non-finite or exploded. The CLI maps this to exit code 3.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fogflow
