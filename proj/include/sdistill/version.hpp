#pragma once

namespace sdistill {

inline constexpr const char* kToolkitName = "sdistill";
inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace sdistill
