#include "neureg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "neureg/fourier.hpp"
#include "neureg/random.hpp"
#include "neureg/warp.hpp"

namespace neureg {

namespace {

constexpr double kBackground = 0.0;
constexpr double kShellIntensity = 0.2;
constexpr double kMiddleIntensity = 0.55;
constexpr double kCoreIntensity = 0.8;
constexpr double kBlobIntensity = 0.35;

constexpr double kShellInner = 0.86;
constexpr double kMiddleInner = 0.58;

// Random band-limited scalar fields decoded to `dims`.
std::vector<double> smooth_noise(Rng& rng, const Dims& band, const Dims& dims, std::size_t channels) {
    std::vector<double> coeffs(channels * band.count());
    for (double& c : coeffs) c = rng.normal();
    const fourier::BandDecoder decoder(band, dims);
    std::vector<double> out(channels * dims.count());
    for (std::size_t c = 0; c < channels; ++c)
        decoder.apply(std::span<const double>(coeffs).subspan(c * band.count(), band.count()),
                      std::span<double>(out).subspan(c * dims.count(), dims.count()));
    return out;
}

Dims clamp_band(const Dims& band, const Dims& dims) {
    return {std::min(band.w, dims.w), std::min(band.h, dims.h), std::min(band.d, dims.d)};
}

Volume3 blur121(const Volume3& v) {
    const Dims& d = v.dims();
    std::vector<double> a = v.data(), b(a.size());
    const std::size_t strides[3] = {1, d.w, d.w * d.h};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t n = d[axis];
        for (std::size_t k = 0; k < d.d; ++k)
            for (std::size_t j = 0; j < d.h; ++j)
                for (std::size_t i = 0; i < d.w; ++i) {
                    const std::size_t p = d.index(i, j, k);
                    const std::size_t t = axis == 0 ? i : (axis == 1 ? j : k);
                    const double lo = t > 0 ? a[p - strides[axis]] : a[p];
                    const double hi = t + 1 < n ? a[p + strides[axis]] : a[p];
                    b[p] = 0.25 * lo + 0.5 * a[p] + 0.25 * hi;
                }
        std::swap(a, b);
    }
    return Volume3(d, std::move(a));
}

}  // namespace

void DomainSpec::validate() const {
    if (!(std::abs(gain) > 0.0) || !std::isfinite(gain)) throw std::invalid_argument("DomainSpec " + name + ": gain must be nonzero");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("DomainSpec " + name + ": gamma must be positive");
    if (!(noise_sd >= 0.0)) throw std::invalid_argument("DomainSpec " + name + ": noise_sd must be >= 0");
    if (!(bias_amplitude >= 0.0 && bias_amplitude < 1.0))
        throw std::invalid_argument("DomainSpec " + name + ": bias_amplitude must lie in [0, 1)");
}

double DomainSpec::transfer(double v) const { return gain * (gamma == 1.0 ? v : std::pow(v, gamma)) + offset; }

std::vector<DomainSpec> default_domains() {
    return {
        {"identity", 1.0, 0.0, 1.0, 0.0, 0.0},
        {"inverted", -1.0, 1.0, 1.0, 0.0, 0.0},
        {"gamma-bright", 1.0, 0.0, 0.5, 0.0, 0.0},
        {"gamma-dark", 1.0, 0.0, 2.0, 0.0, 0.0},
        {"low-noise-bias", 1.0, 0.0, 1.0, 0.01, 0.1},
        {"inverted-bias", -1.0, 1.0, 1.0, 0.01, 0.1},
    };
}

DomainSpec domain_by_name(const std::string& name) {
    for (const auto& d : default_domains())
        if (d.name == name) return d;
    throw std::invalid_argument("unknown domain '" + name + "'");
}

LabelledVolume make_phantom(std::uint64_t seed, const Dims& dims) {
    if (dims.w < 16 || dims.h < 16 || dims.d < 16)
        throw std::invalid_argument("make_phantom: dims " + to_string(dims) + " must be at least 16 per axis");
    Rng rng(seed);
    double centre[3], radius[3];
    for (std::size_t a = 0; a < 3; ++a) {
        const double n = static_cast<double>(dims[a]);
        centre[a] = 0.5 * (n - 1.0) + rng.uniform(-0.04, 0.04) * n;
        radius[a] = 0.40 * n * rng.uniform(0.95, 1.05);
    }
    // Two plane waves over the normalised coordinates make the boundaries wobble.
    double wave[2][3], phase[2];
    for (auto& w : wave)
        for (double& c : w) c = rng.uniform(-1.5, 1.5);
    for (double& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double blob_dir[3], norm = 0.0;
    for (double& c : blob_dir) {
        c = rng.normal();
        norm += c * c;
    }
    norm = std::sqrt(norm);
    const double blob_offset = 0.3, blob_radius = 0.18 * rng.uniform(0.95, 1.05);

    std::vector<std::uint16_t> labels(dims.count(), 0);
    Volume3 image(dims, kBackground);
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                const double pos[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                double u[3], rho2 = 0.0, blob2 = 0.0;
                for (std::size_t a = 0; a < 3; ++a) {
                    u[a] = (pos[a] - centre[a]) / radius[a];
                    rho2 += u[a] * u[a];
                    const double b = (u[a] - blob_offset * blob_dir[a] / norm) / blob_radius;
                    blob2 += b * b;
                }
                double wobble = 0.0;
                for (std::size_t w = 0; w < 2; ++w)
                    wobble += 0.03 * std::sin(2.0 * std::numbers::pi * (wave[w][0] * u[0] + wave[w][1] * u[1] + wave[w][2] * u[2]) + phase[w]);
                const double rho = std::sqrt(rho2) * (1.0 + wobble);
                std::uint16_t label = 0;
                double value = kBackground;
                if (rho <= 1.0) {
                    if (blob2 <= 1.0) {
                        label = 4, value = kBlobIntensity;
                    } else if (rho > kShellInner) {
                        label = 1, value = kShellIntensity;
                    } else if (rho > kMiddleInner) {
                        label = 2, value = kMiddleIntensity;
                    } else {
                        label = 3, value = kCoreIntensity;
                    }
                }
                labels[dims.index(i, j, k)] = label;
                image.at(i, j, k) = value;
            }
    return {blur121(image), LabelVolume(dims, std::move(labels))};
}

void SubjectOptions::validate() const {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw std::invalid_argument("SubjectOptions: amplitude must be >= 0");
    if (band.count() == 0) throw std::invalid_argument("SubjectOptions: band must be nonempty");
}

Subject make_subject(std::uint64_t seed, const LabelledVolume& base, const SubjectOptions& options) {
    options.validate();
    const Dims& dims = base.image.dims();
    if (!(base.labels.dims() == dims)) throw std::invalid_argument("make_subject: image and labels differ in dims");
    Rng rng(seed);
    DeformationField field(dims, smooth_noise(rng, clamp_band(options.band, dims), dims, 3));
    const std::size_t n = dims.count();
    double peak = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double m = std::sqrt(field.data[p] * field.data[p] + field.data[n + p] * field.data[n + p] +
                                   field.data[2 * n + p] * field.data[2 * n + p]);
        peak = std::max(peak, m);
    }
    const double scale = peak > 0.0 ? options.amplitude / peak : 0.0;
    for (double& v : field.data) v *= scale;
    return {warp_trilinear(base.image, field), warp_labels(base.labels, field), std::move(field)};
}

Volume3 apply_domain(const Volume3& volume, const DomainSpec& spec, std::uint64_t seed) {
    spec.validate();
    constexpr double slack = 1e-12;
    for (double v : volume.data())
        if (!(v >= -slack && v <= 1.0 + slack)) throw std::invalid_argument("apply_domain: input intensities must lie in [0, 1]");
    const Dims& dims = volume.dims();
    Rng rng(seed);
    std::vector<double> out(volume.size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = spec.transfer(std::clamp(volume.data()[p], 0.0, 1.0));
    if (spec.bias_amplitude > 0.0) {
        auto bias = smooth_noise(rng, clamp_band({2, 2, 2}, dims), dims, 1);
        double peak = 0.0;
        for (double b : bias) peak = std::max(peak, std::abs(b));
        if (peak > 0.0)
            for (std::size_t p = 0; p < out.size(); ++p) out[p] *= 1.0 + spec.bias_amplitude * bias[p] / peak;
    }
    if (spec.noise_sd > 0.0)
        for (double& v : out) v += rng.normal(0.0, spec.noise_sd);
    for (double& v : out) v = std::clamp(v, 0.0, 1.0);
    return Volume3(dims, std::move(out));
}

std::size_t Cohort::domain_index(const std::string& name) const {
    for (std::size_t d = 0; d < domains.size(); ++d)
        if (domains[d].name == name) return d;
    throw std::invalid_argument("cohort has no domain '" + name + "'");
}

Cohort make_cohort(std::size_t subjects, const std::vector<DomainSpec>& domains, std::uint64_t seed, const Dims& dims,
                   const SubjectOptions& options) {
    if (subjects == 0) throw std::invalid_argument("make_cohort: need at least one subject");
    if (domains.empty()) throw std::invalid_argument("make_cohort: need at least one domain");
    for (const auto& d : domains) d.validate();
    const LabelledVolume base = make_phantom(mix_seed(seed, 1), dims);
    Cohort cohort{dims, domains, std::vector<std::vector<Volume3>>(domains.size()), {}};
    for (std::size_t s = 0; s < subjects; ++s) {
        Subject subject = make_subject(mix_seed(seed, 100 + s), base, options);
        for (std::size_t d = 0; d < domains.size(); ++d)
            cohort.images[d].push_back(apply_domain(subject.image, domains[d], mix_seed(seed, 10000 + 64 * s + d)));
        cohort.labels.push_back(std::move(subject.labels));
    }
    return cohort;
}

namespace {

std::string image_file(std::size_t s, const std::string& domain) { return "subject" + std::to_string(s) + "_" + domain + ".nrv"; }
std::string label_file(std::size_t s) { return "subject" + std::to_string(s) + "_labels.nrv"; }

}  // namespace

std::filesystem::path write_cohort(const Cohort& cohort, const std::filesystem::path& dir, std::uint64_t seed) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(IoErrc::unwritable_path, "cannot create directory " + dir.string() + ": " + ec.message());
    nlohmann::json manifest;
    manifest["format"] = "neureg-cohort";
    manifest["seed"] = seed;
    manifest["dims"] = {cohort.dims.w, cohort.dims.h, cohort.dims.d};
    manifest["subjects"] = cohort.subject_count();
    auto& domains = manifest["domains"] = nlohmann::json::array();
    for (const auto& d : cohort.domains)
        domains.push_back({{"name", d.name}, {"gain", d.gain}, {"offset", d.offset}, {"gamma", d.gamma},
                           {"noise_sd", d.noise_sd}, {"bias_amplitude", d.bias_amplitude}});
    auto& entries = manifest["entries"] = nlohmann::json::array();
    for (std::size_t s = 0; s < cohort.subject_count(); ++s) {
        save_raw(cohort.labels[s], dir / label_file(s));
        for (std::size_t d = 0; d < cohort.domains.size(); ++d) {
            const std::string name = cohort.domains[d].name;
            save_raw(cohort.images[d][s], dir / image_file(s, name));
            entries.push_back({{"subject", s}, {"domain", name}, {"image", image_file(s, name)}, {"labels", label_file(s)}});
        }
    }
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError(IoErrc::unwritable_path, "cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError(IoErrc::unwritable_path, "failed writing " + path.string());
    return path;
}

Cohort read_cohort(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError(IoErrc::unreadable_path, "cannot read " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
        if (manifest.at("format") != "neureg-cohort") throw IoError(IoErrc::bad_header, path.string() + " is not a cohort manifest");
        const auto dims = manifest.at("dims").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw IoError(IoErrc::bad_header, path.string() + ": dims must have three entries");
        Cohort cohort;
        cohort.dims = {dims[0], dims[1], dims[2]};
        for (const auto& d : manifest.at("domains"))
            cohort.domains.push_back({d.at("name").get<std::string>(), d.at("gain").get<double>(), d.at("offset").get<double>(),
                                      d.at("gamma").get<double>(), d.at("noise_sd").get<double>(), d.at("bias_amplitude").get<double>()});
        const auto subjects = manifest.at("subjects").get<std::size_t>();
        cohort.images.assign(cohort.domains.size(), std::vector<Volume3>(subjects));
        cohort.labels.resize(subjects);
        for (std::size_t s = 0; s < subjects; ++s) cohort.labels[s] = load_labels(dir / label_file(s));
        for (const auto& e : manifest.at("entries")) {
            const auto s = e.at("subject").get<std::size_t>();
            if (s >= subjects) throw IoError(IoErrc::bad_header, path.string() + ": subject index out of range");
            cohort.images[cohort.domain_index(e.at("domain").get<std::string>())][s] = load_volume(dir / e.at("image").get<std::string>());
        }
        for (const auto& per_domain : cohort.images)
            for (const auto& v : per_domain)
                if (!(v.dims() == cohort.dims)) throw IoError(IoErrc::bad_header, path.string() + ": missing or mis-sized volume");
        return cohort;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoErrc::bad_header, path.string() + ": " + e.what());
    }
}

}  // namespace neureg
