#pragma once

#include <stdexcept>
#include <string>

namespace fusemerge {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (open/read/write).
struct IoError : Error {
    using Error::Error;
};

// File content violates its format contract. The kind distinguishes the
// failure classes the container loader can report.
struct FormatError : Error {
    enum class Kind { MalformedHeader, TruncatedPayload, NonFinite, DuplicateName };

    Kind kind;
    FormatError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

// Checkpoints disagree in tensor names, shapes or dtypes.
struct IncompatibleError : Error {
    using Error::Error;
};

// Training loss left the finite range.
struct NonFiniteLossError : Error {
    using Error::Error;
};

}  // namespace fusemerge
