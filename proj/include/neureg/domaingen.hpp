#pragma once

#include <cstddef>
#include <vector>

#include "neureg/volume.hpp"

namespace neureg {

struct PatchStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

/// Non-overlapping tiling of a volume into cubes of side `patch_size`.
/// Patches on the high boundary are ragged (smaller), never padded.
struct PatchGrid {
    Dims volume_dims;
    std::size_t patch_size = 0;
    Dims patch_counts;
    std::vector<PatchStats> stats;  // x-fastest over patch_counts

    std::size_t patch_of(std::size_t i, std::size_t j, std::size_t k) const {
        return patch_counts.index(i / patch_size, j / patch_size, k / patch_size);
    }
};

/// Intensities replaced by max-normalized per-patch standard deviations.
struct DomainAgnosticVolume {
    Volume3 volume;
    std::size_t source_patch_size = 0;

    const Dims& dims() const { return volume.dims(); }
};

constexpr std::size_t kDefaultPatchSize = 4;

/// Per-patch population mean and standard deviation (divisor = voxel count of the patch).
PatchGrid partition_patches(const Volume3& volume, std::size_t patch_size);

/// Every voxel of patch t becomes sigma_t / max_t sigma_t. A globally constant input yields zeros.
DomainAgnosticVolume domain_generalize(const Volume3& volume, std::size_t patch_size = kDefaultPatchSize);

}  // namespace neureg
