#pragma once

namespace mfgpc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mfgpc
