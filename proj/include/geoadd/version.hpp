#pragma once

#include <string_view>

namespace geoadd {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr int kModelFormat = 1;

}  // namespace geoadd
