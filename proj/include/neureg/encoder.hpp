#pragma once

// Hierarchical windowed-attention encoder. The fixed and moving volumes enter as
// the two channels of one patch embedding; four stages of (shifted) window
// attention blocks with patch merging in between reduce the token grid; each
// stage output is projected to three displacement channels, resized to the
// decoder band and summed.
//
// Token grids are stored as [N, C] with token n = x + gx * (y + gy * z), which is
// the same memory order as a [gz, gy, gx, C] tensor.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neureg/autodiff.hpp"
#include "neureg/volume.hpp"

namespace neureg {

using Extent3 = std::array<std::size_t, 3>;  // (x, y, z)

struct EncoderConfig {
    std::size_t patch_embed_size = 2;
    std::size_t embed_dim = 16;
    std::array<std::size_t, 4> depths{2, 2, 2, 2};
    std::array<std::size_t, 4> heads{2, 2, 4, 4};
    Extent3 window{2, 3, 4};
    std::size_t mlp_ratio = 2;
    /// Low-resolution field extents handed to the decoder. All-zero means
    /// "a quarter of the input per axis, rounded up".
    Dims band_dims{0, 0, 0};

    void validate() const;
    std::size_t stage_dim(std::size_t stage) const { return embed_dim << stage; }
    Dims resolve_band(const Dims& input) const;
};

struct Parameter {
    std::string name;
    ad::Shape shape;
    std::vector<double> value;
};

/// All trainable tensors, in a fixed order.
class ModelParams {
public:
    void add(std::string name, ad::Shape shape, std::vector<double> value);
    const std::vector<Parameter>& list() const { return params_; }
    std::vector<Parameter>& list() { return params_; }
    const Parameter& get(const std::string& name) const;
    Parameter& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    std::size_t scalar_count() const;
    bool all_finite() const;

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as differentiable leaves.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const ModelParams& params);
    const ad::Tensor& operator[](const std::string& name) const;
    /// Gradients in ModelParams order; zeros where backward did not reach.
    std::vector<std::vector<double>> gradients() const;

private:
    std::vector<std::string> names_;
    std::vector<ad::Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

struct TokenGrid {
    ad::Tensor tokens;  // [gx * gy * gz, C]
    Extent3 grid{};

    std::size_t count() const { return grid[0] * grid[1] * grid[2]; }
    std::size_t channels() const { return tokens.shape()[1]; }
};

struct AttentionWeights {
    ad::Tensor qkv_weight, qkv_bias, proj_weight, proj_bias, rel_bias;
};

// ---- building blocks (exposed for testing) ----

/// Smallest multiple of `window` per axis that holds `grid`.
Extent3 padded_extent(const Extent3& grid, const Extent3& window);

/// Cyclic offset used by shifted blocks: floor(M/2) on axes with more than one window, else 0.
Extent3 shift_for(const Extent3& padded, const Extent3& window);

/// Relative-position table row for each (query, key) pair of a window, [T * T].
std::vector<std::int64_t> relative_position_index(const Extent3& window);
std::size_t relative_table_size(const Extent3& window);

/// Additive mask [nW, T, T] for the cyclically shifted padded grid: 0 where both
/// tokens came from the same contiguous region, -inf otherwise.
std::vector<double> shifted_window_mask(const Extent3& padded, const Extent3& window, const Extent3& shift);

/// Window-partition gather index (element-level) from a padded [P, C] grid to [nW * T, C].
std::vector<std::int64_t> window_partition_index(const Extent3& padded, const Extent3& window, std::size_t channels);

TokenGrid patch_embed(ad::Tape& tape, const Volume3& fixed, const Volume3& moving, std::size_t patch_size,
                      const ad::Tensor& weight, const ad::Tensor& bias);

/// Multi-head self-attention within rectangular windows, with relative position
/// bias. A nonzero shift rolls the grid by -shift first, masks pairs that were not
/// neighbours before the roll, and rolls back afterwards. Optionally exposes the
/// attention probabilities [nW, heads, T, T].
TokenGrid window_attention(const TokenGrid& x, const Extent3& window, const Extent3& shift, std::size_t heads,
                           const AttentionWeights& w, ad::Tensor* probs_out = nullptr);

TokenGrid patch_merging(const TokenGrid& x, const ad::Tensor& gamma, const ad::Tensor& beta, const ad::Tensor& reduction);

/// Trilinear (corner-aligned) resize of [C, gz, gy, gx] to [C, out.d, out.h, out.w].
ad::Tensor resize_trilinear(const ad::Tensor& x, const Dims& out);

class SwinEncoder {
public:
    explicit SwinEncoder(EncoderConfig config);

    const EncoderConfig& config() const { return config_; }

    /// Truncation-free normal(0, 0.02) weights, zero biases, unit norms.
    /// `head_std` sets the spread of the output projection (0 gives an identity start).
    ModelParams init_params(std::uint64_t seed, double head_std = 0.02) const;

    TokenGrid embed(ad::Tape& tape, const BoundParams& p, const Volume3& fixed, const Volume3& moving) const;
    TokenGrid stage(const TokenGrid& x, std::size_t stage_index, const BoundParams& p) const;
    TokenGrid merge(const TokenGrid& x, std::size_t stage_index, const BoundParams& p) const;

    /// Low-resolution displacement field [3, band.d, band.h, band.w]: the sum of
    /// one projected and resized head per stage output.
    ad::Tensor forward(ad::Tape& tape, const BoundParams& p, const Volume3& fixed, const Volume3& moving) const;

private:
    TokenGrid block(const TokenGrid& x, std::size_t stage_index, std::size_t block_index, const BoundParams& p) const;
    ad::Tensor head(const TokenGrid& x, std::size_t stage_index, const BoundParams& p, const Dims& band) const;

    EncoderConfig config_;
};

}  // namespace neureg
