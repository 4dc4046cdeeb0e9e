#pragma once

#include <stdexcept>
#include <string>

namespace fsad {

// Single exception type for every recoverable failure in the library.  The
// message is the user-facing diagnostic; callers that need to branch on the
// failure kind match on the leading phrase.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& message) {
    if (!cond) throw Error(message);
}

} // namespace fsad
