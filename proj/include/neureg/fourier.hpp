#pragma once

// Band-limited displacement decoding: DFT of a low-resolution field, zero
// padding of its spectrum to the full grid, inverse DFT. The decoder has no
// trainable state; its backward pass is the exact linear adjoint.

#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

#include "neureg/autodiff.hpp"
#include "neureg/volume.hpp"

namespace neureg::fourier {

using Complex = std::complex<double>;

/// Complex coefficients, DC at (0,0,0), standard DFT frequency order, x fastest.
struct SpectralField {
    Dims dims;
    std::vector<Complex> coeffs;
};

class ImaginaryResidueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unnormalized forward transform X[k] = sum_n x[n] exp(-2 pi i k.n / N).
SpectralField dft3(const Dims& dims, std::span<const double> spatial);
SpectralField dft3(const Dims& dims, std::span<const Complex> spatial);

/// Inverse transform with 1/N, complex result.
std::vector<Complex> idft3_complex(const SpectralField& spec);

/// Real part of the inverse transform. Throws ImaginaryResidueError when the
/// imaginary part exceeds 1e-9 (relative to max(1, |real|_inf)).
std::vector<double> idft3(const SpectralField& spec);

/// Places the band into the corners of a full-size spectrum. Per axis, band
/// indices [0, ceil(b/2)) keep their frequency and the rest map to negative
/// frequencies at the top indices. For even b the Nyquist bin is split in half
/// between +b/2 and -b/2 so that Hermitian symmetry survives.
SpectralField zero_pad_spectrum(const SpectralField& spec, const Dims& full);

/// Adjoint of zero_pad_spectrum: gathers the band back out of a full spectrum.
SpectralField crop_spectrum(const SpectralField& full_spec, const Dims& band);

/// ceil(full / 4) per axis.
Dims default_band(const Dims& full);

/// Separable real operator equal to scale * Re(idft3(zero_pad(dft3(x)))) with
/// scale = prod(full / band), so a constant band decodes to the same constant.
class BandDecoder {
public:
    BandDecoder(Dims band, Dims full);

    const Dims& band() const { return band_; }
    const Dims& full() const { return full_; }

    /// One channel: band.count() values in, full.count() values out.
    void apply(std::span<const double> band_values, std::span<double> full_values) const;
    /// Transpose of apply.
    void apply_adjoint(std::span<const double> full_values, std::span<double> band_values) const;

    /// Per-axis synthesis kernel [full_n x band_n], row-major.
    const std::vector<double>& kernel(std::size_t axis) const { return kernels_[axis]; }

private:
    Dims band_;
    Dims full_;
    std::vector<double> kernels_[3];
    std::vector<double> adjoint_[3];
};

/// 3-channel low-resolution field [3 x band] (x fastest per channel) to a full-resolution field.
DeformationField decode(std::span<const double> lowres, const Dims& band, const Dims& full);
std::vector<double> decode_adjoint(const DeformationField& full_grad, const Dims& band);

/// Literal composition dft3 -> zero_pad_spectrum -> idft3 -> scale, one channel.
std::vector<double> decode_channel_reference(std::span<const double> lowres, const Dims& band, const Dims& full);

/// Tape op: [3, bz, by, bx] -> [3, D, H, W].
ad::Tensor decode(const ad::Tensor& lowres, const Dims& full);

}  // namespace neureg::fourier
