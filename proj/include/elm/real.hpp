#pragma once

#include <cmath>
#include <cstddef>

namespace elm {

// Value type of all tensors. Double by default; the gradient checks need the
// f64 headroom. Build with -DELM_SINGLE_PRECISION=ON for float training runs.
#ifdef ELM_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

inline bool all_finite(const real* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

}  // namespace elm
