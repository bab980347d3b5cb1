#pragma once

namespace rowpilot {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rowpilot
