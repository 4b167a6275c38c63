#pragma once

namespace citecat {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace citecat
