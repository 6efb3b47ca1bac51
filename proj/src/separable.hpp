#pragma once

#include <span>
#include <vector>

#include "neureg/volume.hpp"

namespace neureg::detail {

// out = K applied along one axis of an x-fastest grid; K is [out_n x in_n], row-major.
inline void apply_axis(const std::vector<double>& kernel, std::size_t out_n, std::size_t in_n, std::size_t axis,
                       const Dims& in_dims, std::span<const double> in, std::vector<double>& out, Dims& out_dims) {
    out_dims = in_dims;
    if (axis == 0) out_dims.w = out_n;
    else if (axis == 1) out_dims.h = out_n;
    else out_dims.d = out_n;
    out.assign(out_dims.count(), 0.0);
    const std::size_t in_stride = axis == 0 ? 1 : (axis == 1 ? in_dims.w : in_dims.w * in_dims.h);
    for (std::size_t k = 0; k < out_dims.d; ++k)
        for (std::size_t j = 0; j < out_dims.h; ++j)
            for (std::size_t i = 0; i < out_dims.w; ++i) {
                const std::size_t t = axis == 0 ? i : (axis == 1 ? j : k);
                const std::size_t base = axis == 0 ? in_dims.index(0, j, k)
                                                   : (axis == 1 ? in_dims.index(i, 0, k) : in_dims.index(i, j, 0));
                const double* krow = kernel.data() + t * in_n;
                double acc = 0.0;
                for (std::size_t n = 0; n < in_n; ++n) acc += krow[n] * in[base + n * in_stride];
                out[out_dims.index(i, j, k)] = acc;
            }
}

inline std::vector<double> transpose(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    return t;
}

/// Applies per-axis kernels kx, ky, kz (each [out_n x in_n]) to a grid.
inline std::vector<double> apply_separable(const std::vector<double>* kernels, const Dims& in_dims, const Dims& out_dims,
                                           std::span<const double> in) {
    std::vector<double> a, b;
    Dims da, db;
    apply_axis(kernels[0], out_dims.w, in_dims.w, 0, in_dims, in, a, da);
    apply_axis(kernels[1], out_dims.h, in_dims.h, 1, da, a, b, db);
    apply_axis(kernels[2], out_dims.d, in_dims.d, 2, db, b, a, da);
    return a;
}

}  // namespace neureg::detail
