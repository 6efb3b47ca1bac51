#pragma once

// Synthetic brain-like phantoms for multi-subject, multi-domain experiments.
//
// A phantom is a wobbly ellipsoid with a thin outer shell (label 1), a middle
// layer (label 2), a core (label 3) and a small off-centre blob (label 4).
// Subjects are smooth random deformations of one phantom. Domains remap the
// intensities, optionally with a multiplicative bias field and additive noise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neureg/volume.hpp"

namespace neureg {

constexpr Dims kDefaultSynthDims{32, 40, 48};

struct DomainSpec {
    std::string name;
    double gain = 1.0;    // a
    double offset = 0.0;  // b
    double gamma = 1.0;   // applied before the affine part: a * v^gamma + b
    double noise_sd = 0.0;
    double bias_amplitude = 0.0;  // bias field lies in [1 - amp, 1 + amp]

    void validate() const;
    double transfer(double v) const;
};

/// identity, inverted, gamma-bright, gamma-dark, low-noise-bias, inverted-bias.
std::vector<DomainSpec> default_domains();
DomainSpec domain_by_name(const std::string& name);

struct LabelledVolume {
    Volume3 image;
    LabelVolume labels;
};

LabelledVolume make_phantom(std::uint64_t seed, const Dims& dims = kDefaultSynthDims);

struct SubjectOptions {
    double amplitude = 2.5;  // max |displacement| in voxels
    Dims band{3, 3, 3};

    void validate() const;
};

struct Subject {
    Volume3 image;
    LabelVolume labels;
    DeformationField field;  // generating deformation, base -> subject
};

Subject make_subject(std::uint64_t seed, const LabelledVolume& base, const SubjectOptions& options = {});

/// Input must lie in [0, 1]; the output is clipped to [0, 1].
Volume3 apply_domain(const Volume3& volume, const DomainSpec& spec, std::uint64_t seed);

/// In-memory cohort: images[domain][subject], labels[subject].
struct Cohort {
    Dims dims;
    std::vector<DomainSpec> domains;
    std::vector<std::vector<Volume3>> images;
    std::vector<LabelVolume> labels;

    std::size_t subject_count() const { return labels.size(); }
    std::size_t domain_index(const std::string& name) const;
};

Cohort make_cohort(std::size_t subjects, const std::vector<DomainSpec>& domains, std::uint64_t seed,
                   const Dims& dims = kDefaultSynthDims, const SubjectOptions& options = {});

/// Writes one raw volume per (subject, domain), one label volume per subject and
/// manifest.json. Returns the manifest path.
std::filesystem::path write_cohort(const Cohort& cohort, const std::filesystem::path& dir, std::uint64_t seed);
Cohort read_cohort(const std::filesystem::path& dir);

}  // namespace neureg
