#pragma once

#include <string>
#include <string_view>

namespace ivtf {

/// Shortest decimal string that round-trips to the same double; locale independent.
std::string format_double(double v);

/// Strict locale-independent parse of a whole field; returns false on any trailing text.
bool parse_double(std::string_view s, double& out);

}  // namespace ivtf
