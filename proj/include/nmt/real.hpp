#pragma once

// Numeric precision of the tensor core. The library is normally built with
// 32-bit floats; a second build with NMT_REAL_DOUBLE exists for gradient
// checking. The two builds live in distinct inline namespaces so both can be
// linked into one test binary.

#if defined(NMT_REAL_DOUBLE)
#define NMT_PRECISION_NS f64
#else
#define NMT_PRECISION_NS f32
#endif

namespace nmt {
inline namespace NMT_PRECISION_NS {

#if defined(NMT_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
