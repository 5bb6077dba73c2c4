#pragma once

namespace perfhom {
inline constexpr const char* kVersion = "0.1.0";
}
