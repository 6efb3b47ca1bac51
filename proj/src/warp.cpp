#include "neureg/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace neureg {

namespace {

struct AxisSample {
    std::size_t i0;
    std::size_t i1;
    double frac;
    bool inside;  // false when the coordinate was clamped; the derivative is then zero
};

AxisSample axis_sample(double x, std::size_t n) {
    const double hi = static_cast<double>(n - 1);
    AxisSample s{};
    s.inside = x >= 0.0 && x <= hi;
    const double c = std::clamp(x, 0.0, hi);
    const double fl = std::floor(c);
    s.i0 = static_cast<std::size_t>(fl);
    s.i1 = std::min(s.i0 + 1, n - 1);
    s.frac = c - fl;
    return s;
}

struct Corners {
    AxisSample x, y, z;
};

double interpolate(const double* v, const Dims& dims, const Corners& c) {
    const double fx = c.x.frac, fy = c.y.frac, fz = c.z.frac;
    const double c00 = v[dims.index(c.x.i0, c.y.i0, c.z.i0)] * (1.0 - fx) + v[dims.index(c.x.i1, c.y.i0, c.z.i0)] * fx;
    const double c10 = v[dims.index(c.x.i0, c.y.i1, c.z.i0)] * (1.0 - fx) + v[dims.index(c.x.i1, c.y.i1, c.z.i0)] * fx;
    const double c01 = v[dims.index(c.x.i0, c.y.i0, c.z.i1)] * (1.0 - fx) + v[dims.index(c.x.i1, c.y.i0, c.z.i1)] * fx;
    const double c11 = v[dims.index(c.x.i0, c.y.i1, c.z.i1)] * (1.0 - fx) + v[dims.index(c.x.i1, c.y.i1, c.z.i1)] * fx;
    const double c0 = c00 * (1.0 - fy) + c10 * fy;
    const double c1 = c01 * (1.0 - fy) + c11 * fy;
    return c0 * (1.0 - fz) + c1 * fz;
}

Corners corners_at(const Dims& dims, const double* field, std::size_t i, std::size_t j, std::size_t k) {
    const std::size_t n = dims.count();
    const std::size_t p = dims.index(i, j, k);
    return {axis_sample(static_cast<double>(i) + field[p], dims.w),
            axis_sample(static_cast<double>(j) + field[n + p], dims.h),
            axis_sample(static_cast<double>(k) + field[2 * n + p], dims.d)};
}

void require_same(const Dims& a, const Dims& b, const char* op) {
    if (!(a == b)) throw std::invalid_argument(std::string(op) + ": dims " + to_string(a) + " and " + to_string(b) + " differ");
}

std::size_t nearest(double x, std::size_t n) {
    const double r = std::ceil(x - 0.5);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(n - 1)));
}

}  // namespace

Volume3 warp_trilinear(const Volume3& moving, const DeformationField& field) {
    const Dims& dims = moving.dims();
    require_same(dims, field.dims, "warp_trilinear");
    std::vector<double> out(dims.count());
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i)
                out[dims.index(i, j, k)] = interpolate(moving.data().data(), dims, corners_at(dims, field.data.data(), i, j, k));
    return Volume3(dims, std::move(out));
}

LabelVolume warp_labels(const LabelVolume& labels, const DeformationField& field) {
    const Dims& dims = labels.dims();
    require_same(dims, field.dims, "warp_labels");
    const std::size_t n = dims.count();
    std::vector<std::uint16_t> out(n);
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                const std::size_t p = dims.index(i, j, k);
                const std::size_t si = nearest(static_cast<double>(i) + field.data[p], dims.w);
                const std::size_t sj = nearest(static_cast<double>(j) + field.data[n + p], dims.h);
                const std::size_t sk = nearest(static_cast<double>(k) + field.data[2 * n + p], dims.d);
                out[p] = labels.data()[dims.index(si, sj, sk)];
            }
    return LabelVolume(dims, std::move(out));
}

JacobianStats jacobian_stats(const DeformationField& field) {
    const Dims& dims = field.dims;
    if (dims.w < 2 || dims.h < 2 || dims.d < 2) throw std::invalid_argument("jacobian_stats: need at least 2 voxels per axis");
    const std::size_t n = dims.count();
    // d u_c / d axis at voxel (i, j, k)
    auto derivative = [&](std::size_t c, std::size_t axis, std::size_t i, std::size_t j, std::size_t k) {
        const double* u = field.data.data() + c * n;
        const std::size_t pos = axis == 0 ? i : (axis == 1 ? j : k);
        const std::size_t len = dims[axis];
        auto at = [&](std::size_t q) {
            return axis == 0 ? u[dims.index(q, j, k)] : (axis == 1 ? u[dims.index(i, q, k)] : u[dims.index(i, j, q)]);
        };
        if (pos == 0) return at(1) - at(0);
        if (pos == len - 1) return at(len - 1) - at(len - 2);
        return 0.5 * (at(pos + 1) - at(pos - 1));
    };
    JacobianStats stats{std::numeric_limits<double>::infinity(), 0.0};
    std::size_t nonpositive = 0;
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                double m[3][3];
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t a = 0; a < 3; ++a) m[c][a] = (c == a ? 1.0 : 0.0) + derivative(c, a, i, j, k);
                const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                                   m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                                   m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                stats.min_det = std::min(stats.min_det, det);
                if (det <= 0.0) ++nonpositive;
            }
    stats.nonpositive_fraction = static_cast<double>(nonpositive) / static_cast<double>(n);
    return stats;
}

namespace ad_ops {

ad::Tensor warp(const ad::Tensor& moving, const ad::Tensor& field) {
    const auto& ms = moving.shape();
    const auto& fs = field.shape();
    if (ms.size() != 3 || fs.size() != 4 || fs[0] != 3 || fs[1] != ms[0] || fs[2] != ms[1] || fs[3] != ms[2]) {
        throw ad::ShapeError("warp: moving " + ad::to_string(ms) + " and field " + ad::to_string(fs) + " are incompatible");
    }
    const Dims dims{ms[2], ms[1], ms[0]};
    std::vector<double> out(dims.count());
    const double* mv = moving.value().data();
    const double* fv = field.value().data();
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i)
                out[dims.index(i, j, k)] = interpolate(mv, dims, corners_at(dims, fv, i, j, k));

    return moving.tape().record(ms, std::move(out), {moving, field}, [moving, field, dims](std::span<const double> g) {
        const double* mv = moving.value().data();
        const double* fv = field.value().data();
        const std::size_t n = dims.count();
        std::span<double> gm = moving.requires_grad() ? moving.grad_accumulator() : std::span<double>{};
        std::span<double> gf = field.requires_grad() ? field.grad_accumulator() : std::span<double>{};
        for (std::size_t k = 0; k < dims.d; ++k)
            for (std::size_t j = 0; j < dims.h; ++j)
                for (std::size_t i = 0; i < dims.w; ++i) {
                    const std::size_t p = dims.index(i, j, k);
                    const double go = g[p];
                    if (go == 0.0) continue;
                    const Corners c = corners_at(dims, fv, i, j, k);
                    const double fx = c.x.frac, fy = c.y.frac, fz = c.z.frac;
                    const std::size_t xs[2] = {c.x.i0, c.x.i1}, ys[2] = {c.y.i0, c.y.i1}, zs[2] = {c.z.i0, c.z.i1};
                    const double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy}, wz[2] = {1.0 - fz, fz};
                    double dx = 0.0, dy = 0.0, dz = 0.0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) {
                                const std::size_t q = dims.index(xs[a], ys[b], zs[e]);
                                if (!gm.empty()) gm[q] += go * wx[a] * wy[b] * wz[e];
                                const double v = mv[q];
                                dx += v * (a ? 1.0 : -1.0) * wy[b] * wz[e];
                                dy += v * wx[a] * (b ? 1.0 : -1.0) * wz[e];
                                dz += v * wx[a] * wy[b] * (e ? 1.0 : -1.0);
                            }
                    if (!gf.empty()) {
                        if (c.x.inside) gf[p] += go * dx;
                        if (c.y.inside) gf[n + p] += go * dy;
                        if (c.z.inside) gf[2 * n + p] += go * dz;
                    }
                }
    });
}

}  // namespace ad_ops

}  // namespace neureg
