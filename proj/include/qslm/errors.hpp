#pragma once

#include <stdexcept>
#include <string>

namespace qslm {

// Bad user input: malformed config, out-of-range parameter, dimension mismatch.
// The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// An iterative routine exhausted its budget without meeting its tolerance.
// The CLI maps this to exit code 3.
class convergence_error : public std::runtime_error {
public:
    explicit convergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace qslm
