#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "neureg/fourier.hpp"
#include "test_util.hpp"

using namespace neureg;
using namespace neureg::fourier;

namespace {

// O(N^2) textbook DFT, sign -1 forward.
std::vector<Complex> naive_dft(const Dims& d, const std::vector<Complex>& x, double sign = -1.0) {
    std::vector<Complex> out(d.count());
    for (std::size_t kz = 0; kz < d.d; ++kz)
        for (std::size_t ky = 0; ky < d.h; ++ky)
            for (std::size_t kx = 0; kx < d.w; ++kx) {
                Complex acc = 0.0;
                for (std::size_t z = 0; z < d.d; ++z)
                    for (std::size_t y = 0; y < d.h; ++y)
                        for (std::size_t xx = 0; xx < d.w; ++xx) {
                            const double phase = sign * 2.0 * std::numbers::pi *
                                                 (double(kx * xx) / d.w + double(ky * y) / d.h + double(kz * z) / d.d);
                            acc += x[d.index(xx, y, z)] * std::polar(1.0, phase);
                        }
                out[d.index(kx, ky, kz)] = acc;
            }
    return out;
}

std::vector<Complex> complexify(const std::vector<double>& v) { return {v.begin(), v.end()}; }

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Signed frequency of index k on an axis of length n.
long signed_freq(std::size_t k, std::size_t n) { return k < (n + 1) / 2 ? long(k) : long(k) - long(n); }

}  // namespace

TEST_CASE("dft3 agrees with direct summation") {
    Rng rng(1);
    const Dims d{5, 4, 3};
    const auto x = testutil::random_vector(rng, d.count());
    const SpectralField s = dft3(d, x);
    const auto ref = naive_dft(d, complexify(x));
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(s.coeffs[i] - ref[i]) <= 1e-10);
}

TEST_CASE("delta at the origin has an all-ones spectrum; a constant puts c*N at DC") {
    const Dims d{4, 3, 2};
    std::vector<double> delta(d.count(), 0.0);
    delta[0] = 1.0;
    for (const Complex& c : dft3(d, delta).coeffs) CHECK(std::abs(c - Complex(1.0)) <= 1e-12);

    const SpectralField s = dft3(d, std::vector<double>(d.count(), 2.5));
    CHECK(std::abs(s.coeffs[0] - Complex(2.5 * 24.0)) <= 1e-10);
    for (std::size_t i = 1; i < s.coeffs.size(); ++i) CHECK(std::abs(s.coeffs[i]) <= 1e-10);
}

TEST_CASE("Parseval and Hermitian symmetry hold for real input") {
    Rng rng(2);
    const Dims d{6, 5, 4};
    const auto x = testutil::random_vector(rng, d.count());
    const SpectralField s = dft3(d, x);
    double energy = 0.0, spectral = 0.0;
    for (double v : x) energy += v * v;
    for (const Complex& c : s.coeffs) spectral += std::norm(c);
    CHECK(std::abs(energy - spectral / double(d.count())) <= 1e-9 * energy);
    for (std::size_t kz = 0; kz < d.d; ++kz)
        for (std::size_t ky = 0; ky < d.h; ++ky)
            for (std::size_t kx = 0; kx < d.w; ++kx) {
                const Complex a = s.coeffs[d.index(kx, ky, kz)];
                const Complex b = s.coeffs[d.index((d.w - kx) % d.w, (d.h - ky) % d.h, (d.d - kz) % d.d)];
                CHECK(std::abs(a - std::conj(b)) <= 1e-9);
            }
}

TEST_CASE("idft3 inverts dft3 and is linear") {
    Rng rng(3);
    const Dims d{8, 6, 5};
    const auto x = testutil::random_vector(rng, d.count());
    CHECK(testutil::max_abs_diff(idft3(dft3(d, x)), x) <= 1e-9);

    const auto y = testutil::random_vector(rng, d.count());
    const SpectralField X = dft3(d, x), Y = dft3(d, y);
    SpectralField mix{d, std::vector<Complex>(d.count())};
    for (std::size_t i = 0; i < mix.coeffs.size(); ++i) mix.coeffs[i] = 2.0 * X.coeffs[i] - 0.5 * Y.coeffs[i];
    const auto lhs = idft3(mix);
    std::vector<double> rhs(d.count());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = 2.0 * x[i] - 0.5 * y[i];
    CHECK(testutil::max_abs_diff(lhs, rhs) <= 1e-9);

    CHECK(idft3(SpectralField{d, std::vector<Complex>(d.count())}) == std::vector<double>(d.count(), 0.0));
}

TEST_CASE("idft3 refuses a spectrum with a large imaginary residue") {
    const Dims d{4, 1, 1};
    SpectralField s{d, std::vector<Complex>(4)};
    s.coeffs[1] = 1.0;  // no conjugate partner at index 3
    CHECK_THROWS_AS(idft3(s), ImaginaryResidueError);
}

TEST_CASE("zero_pad_spectrum: identity at equal dims, DC stays DC, too-small target rejected") {
    Rng rng(4);
    const Dims d{4, 3, 5};
    const SpectralField s = dft3(d, testutil::random_vector(rng, d.count()));
    const SpectralField same = zero_pad_spectrum(s, d);
    for (std::size_t i = 0; i < s.coeffs.size(); ++i) CHECK(std::abs(same.coeffs[i] - s.coeffs[i]) == 0.0);

    SpectralField dc{{3, 3, 3}, std::vector<Complex>(27)};
    dc.coeffs[0] = 7.0;
    const SpectralField big = zero_pad_spectrum(dc, {8, 8, 8});
    CHECK(big.coeffs[0] == Complex(7.0));
    for (std::size_t i = 1; i < big.coeffs.size(); ++i) CHECK(big.coeffs[i] == Complex(0.0));

    CHECK_THROWS(zero_pad_spectrum(s, {3, 3, 5}));
}

TEST_CASE("a sampled cosine padded 8 to 16 is the same physical cosine on 16 points") {
    const Dims band{8, 1, 1}, full{16, 1, 1};
    std::vector<double> c(8);
    for (std::size_t x = 0; x < 8; ++x) c[x] = std::cos(2.0 * std::numbers::pi * double(x) / 8.0);
    const auto out = decode_channel_reference(c, band, full);
    for (std::size_t x = 0; x < 16; ++x) CHECK(std::abs(out[x] - std::cos(2.0 * std::numbers::pi * double(x) / 16.0)) <= 1e-9);
}

TEST_CASE("an even band's Nyquist bin is shared by both signs and stays real") {
    // Band [1,-1,1,-1] is pure Nyquist; half at +2 and half at -2 decodes to cos(pi x / 2).
    const auto out = decode_channel_reference(std::vector<double>{1, -1, 1, -1}, {4, 1, 1}, {8, 1, 1});
    for (std::size_t x = 0; x < 8; ++x) CHECK(std::abs(out[x] - std::cos(std::numbers::pi * double(x) / 2.0)) <= 1e-12);
}

TEST_CASE("decode: zero, constant, linearity and band==full identity") {
    Rng rng(5);
    const Dims band{3, 4, 5}, full{9, 8, 10};
    CHECK(decode(std::vector<double>(3 * band.count(), 0.0), band, full).data == std::vector<double>(3 * full.count(), 0.0));

    const DeformationField c = decode(std::vector<double>(3 * band.count(), -1.25), band, full);
    for (double v : c.data) CHECK(std::abs(v + 1.25) <= 1e-9);

    const auto f = testutil::random_vector(rng, 3 * band.count());
    const auto g = testutil::random_vector(rng, 3 * band.count());
    std::vector<double> mix(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) mix[i] = 3.0 * f[i] - 2.0 * g[i];
    const auto df = decode(f, band, full).data, dg = decode(g, band, full).data;
    std::vector<double> combo(df.size());
    for (std::size_t i = 0; i < df.size(); ++i) combo[i] = 3.0 * df[i] - 2.0 * dg[i];
    CHECK(testutil::max_abs_diff(decode(mix, band, full).data, combo) <= 1e-9);

    const auto x = testutil::random_vector(rng, 3 * full.count());
    CHECK(testutil::max_abs_diff(decode(x, full, full).data, x) <= 1e-9);
}

TEST_CASE("the separable decoder equals the literal DFT composition") {
    Rng rng(6);
    for (const auto& [band, full] : std::vector<std::pair<Dims, Dims>>{{{2, 3, 4}, {8, 9, 10}}, {{5, 4, 3}, {7, 12, 6}}, {{8, 8, 8}, {16, 16, 16}}}) {
        const auto u = testutil::random_vector(rng, band.count());
        std::vector<double> fast(full.count());
        BandDecoder(band, full).apply(u, fast);
        CHECK(testutil::max_abs_diff(fast, decode_channel_reference(u, band, full)) <= 1e-9);
    }
}

TEST_CASE("decoded fields are band-limited") {
    Rng rng(7);
    const Dims band{4, 3, 5}, full{12, 10, 9};
    std::vector<double> out(full.count());
    BandDecoder(band, full).apply(testutil::random_vector(rng, band.count()), out);
    const SpectralField s = dft3(full, out);
    for (std::size_t kz = 0; kz < full.d; ++kz)
        for (std::size_t ky = 0; ky < full.h; ++ky)
            for (std::size_t kx = 0; kx < full.w; ++kx) {
                const bool inside = std::labs(signed_freq(kx, full.w)) <= long(band.w / 2) &&
                                    std::labs(signed_freq(ky, full.h)) <= long(band.h / 2) &&
                                    std::labs(signed_freq(kz, full.d)) <= long(band.d / 2);
                if (!inside) CHECK(std::abs(s.coeffs[full.index(kx, ky, kz)]) <= 1e-9);
            }
}

TEST_CASE("decode and its adjoint satisfy <Du,v> = <u,D^T v>") {
    Rng rng(8);
    const Dims band{8, 8, 8}, full{32, 32, 32};
    const BandDecoder dec(band, full);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto u = testutil::random_vector(rng, 3 * band.count());
        DeformationField v(full, testutil::random_vector(rng, 3 * full.count()));
        const auto du = decode(u, band, full).data;
        const auto dtv = decode_adjoint(v, band);
        const double lhs = dot(du, v.data), rhs = dot(u, dtv);
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("the tape op backpropagates through the decoder") {
    Rng rng(9);
    const Dims band{3, 2, 4}, full{6, 5, 8};
    auto loss = [&](ad::Tape& t, const std::vector<ad::Tensor>& p) {
        Rng w(10);
        const ad::Tensor out = decode(p[0], full);
        return ad::sum(ad::mul(out, t.constant(out.shape(), testutil::random_vector(w, out.size()))));
    };
    const auto r = ad::grad_check(loss, {{{3, band.d, band.h, band.w}, testutil::random_vector(rng, 3 * band.count())}}, 1e-5, 1e-4);
    CHECK(r.passed);

    ad::Tape tape;
    const ad::Tensor x = tape.constant({3, band.d, band.h, band.w}, 1.0);
    CHECK(decode(x, full).shape() == ad::Shape{3, full.d, full.h, full.w});
    CHECK_THROWS(decode(tape.constant({2, band.d, band.h, band.w}, 1.0), full));
}

TEST_CASE("default band is a quarter per axis rounded up") {
    CHECK(default_band({32, 40, 48}) == Dims{8, 10, 12});
    CHECK(default_band({9, 5, 4}) == Dims{3, 2, 1});
}
