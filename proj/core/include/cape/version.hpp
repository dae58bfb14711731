#pragma once

#include <string_view>

namespace cape {

inline constexpr std::string_view kVersion = "0.1.0";

} // namespace cape
