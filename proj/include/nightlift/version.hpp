#pragma once

namespace nightlift {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kVersionString = "nightlift 0.1.0";

}  // namespace nightlift
