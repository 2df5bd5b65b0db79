#pragma once

#include <stdexcept>
#include <string>

namespace grit {

// Error taxonomy shared across the library. Every category maps to the CLI
// exit-code contract: config/usage errors exit 2, everything else exits 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct shape_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct usage_error : error {
    using error::error;
};

struct input_error : error {
    using error::error;
};

struct degenerate_input_error : error {
    using error::error;
};

struct capacity_error : error {
    using error::error;
};

struct index_error : error {
    using error::error;
};

struct parse_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

struct integrity_error : error {
    using error::error;
};

struct capability_error : error {
    using error::error;
};

}  // namespace grit
