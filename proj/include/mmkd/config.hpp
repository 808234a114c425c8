#pragma once

#include <cstddef>
#include <vector>

// MMKD_ABI names the inline namespace for the active precision so that the
// 32-bit and 64-bit builds of the library can coexist in one executable.
#if defined(MMKD_FLOAT64)
#define MMKD_ABI f64
#else
#define MMKD_ABI f32
#endif

namespace mmkd {
inline namespace MMKD_ABI {

#if defined(MMKD_FLOAT64)
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

}  // namespace MMKD_ABI
}  // namespace mmkd
