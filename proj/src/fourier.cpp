#include "neureg/fourier.hpp"

#include "separable.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace neureg::fourier {

namespace {

constexpr double kResidueTol = 1e-9;

// In-place DFT along one axis of an x-fastest complex array. sign = -1 forward, +1 inverse (unnormalized).
void transform_axis(std::vector<Complex>& data, const Dims& dims, std::size_t axis, int sign) {
    const std::size_t n = dims[axis];
    if (n == 1) return;
    std::vector<Complex> twiddle(n);
    for (std::size_t m = 0; m < n; ++m) {
        const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
        twiddle[m] = {std::cos(angle), std::sin(angle)};
    }
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? dims.w : dims.w * dims.h);
    const std::size_t lines = dims.count() / n;
    std::vector<Complex> in(n), out(n);
    for (std::size_t line = 0; line < lines; ++line) {
        // Base offset of this line: decompose `line` over the two other axes.
        std::size_t base = 0;
        if (axis == 0) {
            base = line * dims.w;
        } else if (axis == 1) {
            base = (line % dims.w) + (line / dims.w) * dims.w * dims.h;
        } else {
            base = line;
        }
        for (std::size_t i = 0; i < n; ++i) in[i] = data[base + i * stride];
        for (std::size_t k = 0; k < n; ++k) {
            Complex acc{0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) acc += in[i] * twiddle[(k * i) % n];
            out[k] = acc;
        }
        for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = out[i];
    }
}

struct Target {
    std::size_t index;
    double weight;
};

// Where each band bin lands in the full spectrum along one axis.
std::vector<std::vector<Target>> pad_targets(std::size_t band, std::size_t full) {
    std::vector<std::vector<Target>> targets(band);
    if (band == full) {
        for (std::size_t i = 0; i < band; ++i) targets[i] = {{i, 1.0}};
        return targets;
    }
    const std::size_t positive = (band + 1) / 2;
    for (std::size_t i = 0; i < band; ++i) {
        if (i < positive) {
            targets[i] = {{i, 1.0}};
        } else if (band % 2 == 0 && i == band / 2) {
            targets[i] = {{full - band / 2, 0.5}, {band / 2, 0.5}};
        } else {
            targets[i] = {{full - (band - i), 1.0}};
        }
    }
    return targets;
}

void check_band(const Dims& band, const Dims& full) {
    if (band.w == 0 || band.h == 0 || band.d == 0 || band.w > full.w || band.h > full.h || band.d > full.d) {
        throw std::invalid_argument("band " + to_string(band) + " must be nonempty and within full dims " + to_string(full));
    }
}

}  // namespace

SpectralField dft3(const Dims& dims, std::span<const double> spatial) {
    std::vector<Complex> c(spatial.begin(), spatial.end());
    return dft3(dims, std::span<const Complex>(c));
}

SpectralField dft3(const Dims& dims, std::span<const Complex> spatial) {
    if (spatial.size() != dims.count()) throw std::invalid_argument("dft3: length does not match " + to_string(dims));
    SpectralField spec{dims, {spatial.begin(), spatial.end()}};
    for (std::size_t axis = 0; axis < 3; ++axis) transform_axis(spec.coeffs, dims, axis, -1);
    return spec;
}

std::vector<Complex> idft3_complex(const SpectralField& spec) {
    std::vector<Complex> data = spec.coeffs;
    for (std::size_t axis = 0; axis < 3; ++axis) transform_axis(data, spec.dims, axis, +1);
    const double inv = 1.0 / static_cast<double>(spec.dims.count());
    for (auto& v : data) v *= inv;
    return data;
}

std::vector<double> idft3(const SpectralField& spec) {
    const auto data = idft3_complex(spec);
    std::vector<double> out(data.size());
    double max_real = 0.0, max_imag = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        out[i] = data[i].real();
        max_real = std::max(max_real, std::abs(data[i].real()));
        max_imag = std::max(max_imag, std::abs(data[i].imag()));
    }
    if (max_imag > kResidueTol * std::max(1.0, max_real)) {
        throw ImaginaryResidueError("idft3: imaginary residue " + std::to_string(max_imag) +
                                    " exceeds tolerance; spectrum is not Hermitian");
    }
    return out;
}

SpectralField zero_pad_spectrum(const SpectralField& spec, const Dims& full) {
    check_band(spec.dims, full);
    const auto tx = pad_targets(spec.dims.w, full.w);
    const auto ty = pad_targets(spec.dims.h, full.h);
    const auto tz = pad_targets(spec.dims.d, full.d);
    SpectralField out{full, std::vector<Complex>(full.count(), Complex{0.0, 0.0})};
    for (std::size_t k = 0; k < spec.dims.d; ++k)
        for (std::size_t j = 0; j < spec.dims.h; ++j)
            for (std::size_t i = 0; i < spec.dims.w; ++i) {
                const Complex v = spec.coeffs[spec.dims.index(i, j, k)];
                for (const auto& z : tz[k])
                    for (const auto& y : ty[j])
                        for (const auto& x : tx[i])
                            out.coeffs[full.index(x.index, y.index, z.index)] += v * (x.weight * y.weight * z.weight);
            }
    return out;
}

SpectralField crop_spectrum(const SpectralField& full_spec, const Dims& band) {
    check_band(band, full_spec.dims);
    const Dims& full = full_spec.dims;
    const auto tx = pad_targets(band.w, full.w);
    const auto ty = pad_targets(band.h, full.h);
    const auto tz = pad_targets(band.d, full.d);
    SpectralField out{band, std::vector<Complex>(band.count(), Complex{0.0, 0.0})};
    for (std::size_t k = 0; k < band.d; ++k)
        for (std::size_t j = 0; j < band.h; ++j)
            for (std::size_t i = 0; i < band.w; ++i) {
                Complex acc{0.0, 0.0};
                for (const auto& z : tz[k])
                    for (const auto& y : ty[j])
                        for (const auto& x : tx[i])
                            acc += full_spec.coeffs[full.index(x.index, y.index, z.index)] * (x.weight * y.weight * z.weight);
                out.coeffs[band.index(i, j, k)] = acc;
            }
    return out;
}

Dims default_band(const Dims& full) { return {(full.w + 3) / 4, (full.h + 3) / 4, (full.d + 3) / 4}; }

BandDecoder::BandDecoder(Dims band, Dims full) : band_(band), full_(full) {
    check_band(band, full);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t b = band[axis], n = full[axis];
        Dims line_band{1, 1, 1}, line_full{1, 1, 1};
        (axis == 0 ? line_band.w : axis == 1 ? line_band.h : line_band.d) = b;
        (axis == 0 ? line_full.w : axis == 1 ? line_full.h : line_full.d) = n;
        // Column c of the kernel is the decoded unit impulse at band index c.
        std::vector<double> kernel(n * b, 0.0);
        for (std::size_t c = 0; c < b; ++c) {
            std::vector<double> impulse(b, 0.0);
            impulse[c] = 1.0;
            const auto column = idft3(zero_pad_spectrum(dft3(line_band, impulse), line_full));
            for (std::size_t t = 0; t < n; ++t) kernel[t * b + c] = column[t] * static_cast<double>(n) / static_cast<double>(b);
        }
        adjoint_[axis] = detail::transpose(kernel, n, b);
        kernels_[axis] = std::move(kernel);
    }
}

void BandDecoder::apply(std::span<const double> band_values, std::span<double> full_values) const {
    if (band_values.size() != band_.count() || full_values.size() != full_.count())
        throw std::invalid_argument("BandDecoder::apply: size mismatch");
    const auto out = detail::apply_separable(kernels_, band_, full_, band_values);
    std::copy(out.begin(), out.end(), full_values.begin());
}

void BandDecoder::apply_adjoint(std::span<const double> full_values, std::span<double> band_values) const {
    if (band_values.size() != band_.count() || full_values.size() != full_.count())
        throw std::invalid_argument("BandDecoder::apply_adjoint: size mismatch");
    // Transposed kernels, applied z first so the largest axis shrinks before the others are touched.
    std::vector<double> a, b;
    Dims da, db;
    detail::apply_axis(adjoint_[2], band_.d, full_.d, 2, full_, full_values, a, da);
    detail::apply_axis(adjoint_[1], band_.h, full_.h, 1, da, a, b, db);
    detail::apply_axis(adjoint_[0], band_.w, full_.w, 0, db, b, a, da);
    std::copy(a.begin(), a.end(), band_values.begin());
}

DeformationField decode(std::span<const double> lowres, const Dims& band, const Dims& full) {
    if (lowres.size() != 3 * band.count()) throw std::invalid_argument("decode: expected 3 x " + to_string(band) + " values");
    const BandDecoder decoder(band, full);
    DeformationField field(full);
    for (std::size_t c = 0; c < 3; ++c)
        decoder.apply(lowres.subspan(c * band.count(), band.count()), {field.channel(c), full.count()});
    return field;
}

std::vector<double> decode_adjoint(const DeformationField& full_grad, const Dims& band) {
    const BandDecoder decoder(band, full_grad.dims);
    std::vector<double> out(3 * band.count());
    for (std::size_t c = 0; c < 3; ++c)
        decoder.apply_adjoint({full_grad.channel(c), full_grad.dims.count()}, std::span(out).subspan(c * band.count(), band.count()));
    return out;
}

std::vector<double> decode_channel_reference(std::span<const double> lowres, const Dims& band, const Dims& full) {
    auto out = idft3(zero_pad_spectrum(dft3(band, lowres), full));
    const double scale = static_cast<double>(full.count()) / static_cast<double>(band.count());
    for (double& v : out) v *= scale;
    return out;
}

ad::Tensor decode(const ad::Tensor& lowres, const Dims& full) {
    const auto& s = lowres.shape();
    if (s.size() != 4 || s[0] != 3) throw ad::ShapeError("decode: expected [3, bz, by, bx], got " + ad::to_string(s));
    const Dims band{s[3], s[2], s[1]};
    auto decoder = std::make_shared<BandDecoder>(band, full);
    std::vector<double> out(3 * full.count());
    const auto in = lowres.value();
    for (std::size_t c = 0; c < 3; ++c)
        decoder->apply(in.subspan(c * band.count(), band.count()), std::span(out).subspan(c * full.count(), full.count()));
    return lowres.tape().record({3, full.d, full.h, full.w}, std::move(out), {lowres}, [lowres, decoder](std::span<const double> g) {
        auto gl = lowres.grad_accumulator();
        const std::size_t nb = decoder->band().count(), nf = decoder->full().count();
        std::vector<double> tmp(nb);
        for (std::size_t c = 0; c < 3; ++c) {
            decoder->apply_adjoint(g.subspan(c * nf, nf), tmp);
            for (std::size_t i = 0; i < nb; ++i) gl[c * nb + i] += tmp[i];
        }
    });
}

}  // namespace neureg::fourier
