#pragma once

namespace dept {

inline constexpr const char* kToolName = "dept";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace dept
