#pragma once

#include <stdexcept>
#include <string>

namespace posekit {

/// Raised for malformed data, shape mismatches and violated preconditions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw Error(what);
}

} // namespace detail
} // namespace posekit
