#pragma once

namespace sca {

inline constexpr const char* kVersion = "0.1.0";

} // namespace sca
