#include "neureg/domaingen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace neureg {

PatchGrid partition_patches(const Volume3& volume, std::size_t patch_size) {
    if (patch_size == 0) throw std::invalid_argument("partition_patches: patch size must be >= 1");
    const Dims& dims = volume.dims();
    auto tiles = [&](std::size_t n) { return (n + patch_size - 1) / patch_size; };

    PatchGrid grid;
    grid.volume_dims = dims;
    grid.patch_size = patch_size;
    grid.patch_counts = {tiles(dims.w), tiles(dims.h), tiles(dims.d)};
    grid.stats.resize(grid.patch_counts.count());

    // Two passes per patch: mean first, then centered squares, so that large
    // offsets do not cancel catastrophically.
    std::vector<double> sums(grid.stats.size(), 0.0);
    const auto& data = volume.data();
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                const std::size_t t = grid.patch_of(i, j, k);
                sums[t] += data[dims.index(i, j, k)];
                grid.stats[t].count += 1;
            }
    for (std::size_t t = 0; t < sums.size(); ++t) grid.stats[t].mean = sums[t] / static_cast<double>(grid.stats[t].count);

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                const std::size_t t = grid.patch_of(i, j, k);
                const double dv = data[dims.index(i, j, k)] - grid.stats[t].mean;
                sums[t] += dv * dv;
            }
    for (std::size_t t = 0; t < sums.size(); ++t)
        grid.stats[t].stddev = std::sqrt(sums[t] / static_cast<double>(grid.stats[t].count));
    return grid;
}

DomainAgnosticVolume domain_generalize(const Volume3& volume, std::size_t patch_size) {
    const PatchGrid grid = partition_patches(volume, patch_size);
    double z = 0.0;
    for (const auto& s : grid.stats) z = std::max(z, s.stddev);

    const Dims& dims = volume.dims();
    std::vector<double> out(dims.count(), 0.0);
    if (z > 0.0) {
        for (std::size_t k = 0; k < dims.d; ++k)
            for (std::size_t j = 0; j < dims.h; ++j)
                for (std::size_t i = 0; i < dims.w; ++i)
                    out[dims.index(i, j, k)] = grid.stats[grid.patch_of(i, j, k)].stddev / z;
    }
    return {Volume3(dims, std::move(out)), patch_size};
}

}  // namespace neureg
