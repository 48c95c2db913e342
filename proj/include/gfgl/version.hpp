#pragma once

namespace gfgl {
inline constexpr const char* kVersion = "0.1.0";
}
