#include "neureg/encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "neureg/fourier.hpp"
#include "neureg/random.hpp"
#include "separable.hpp"

namespace neureg {

namespace {

using Index = std::vector<std::int64_t>;

std::size_t ceil_to(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }
std::size_t product(const Extent3& e) { return e[0] * e[1] * e[2]; }

std::string prefix(std::size_t stage, std::size_t block) {
    return "stage" + std::to_string(stage) + ".block" + std::to_string(block) + ".";
}

ad::Tensor gather(const ad::Tensor& x, Index index, ad::Shape shape) {
    return ad::gather(x, std::make_shared<const Index>(std::move(index)), std::move(shape));
}

// [N, C] on `grid` -> [P, C] on `padded`, zeros in the new high-side cells.
Index pad_index(const Extent3& grid, const Extent3& padded, std::size_t channels) {
    Index idx(product(padded) * channels, -1);
    for (std::size_t z = 0; z < grid[2]; ++z)
        for (std::size_t y = 0; y < grid[1]; ++y)
            for (std::size_t x = 0; x < grid[0]; ++x) {
                const std::size_t dst = x + padded[0] * (y + padded[1] * z);
                const std::size_t src = x + grid[0] * (y + grid[1] * z);
                for (std::size_t c = 0; c < channels; ++c)
                    idx[dst * channels + c] = static_cast<std::int64_t>(src * channels + c);
            }
    return idx;
}

Index crop_index(const Extent3& grid, const Extent3& padded, std::size_t channels) {
    Index idx(product(grid) * channels);
    for (std::size_t z = 0; z < grid[2]; ++z)
        for (std::size_t y = 0; y < grid[1]; ++y)
            for (std::size_t x = 0; x < grid[0]; ++x) {
                const std::size_t src = x + padded[0] * (y + padded[1] * z);
                const std::size_t dst = x + grid[0] * (y + grid[1] * z);
                for (std::size_t c = 0; c < channels; ++c)
                    idx[dst * channels + c] = static_cast<std::int64_t>(src * channels + c);
            }
    return idx;
}

ad::Tensor roll_grid(const ad::Tensor& tokens, const Extent3& padded, const Extent3& shift, int direction) {
    const std::size_t c = tokens.shape()[1];
    const auto grid = ad::reshape(tokens, {padded[2], padded[1], padded[0], c});
    const auto s = [&](std::size_t a) { return direction * static_cast<std::ptrdiff_t>(shift[a]); };
    const auto rolled = ad::cyclic_shift(grid, {s(2), s(1), s(0), 0});
    return ad::reshape(rolled, {product(padded), c});
}

// Corner-aligned linear interpolation weights, [out_n x in_n].
std::vector<double> interp_kernel(std::size_t out_n, std::size_t in_n) {
    std::vector<double> k(out_n * in_n, 0.0);
    for (std::size_t t = 0; t < out_n; ++t) {
        if (in_n == 1) {
            k[t] = 1.0;
            continue;
        }
        const double src = out_n == 1 ? 0.0
                                      : static_cast<double>(t) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
        const auto i0 = std::min(static_cast<std::size_t>(std::floor(src)), in_n - 2);
        const double f = src - static_cast<double>(i0);
        k[t * in_n + i0] += 1.0 - f;
        k[t * in_n + i0 + 1] += f;
    }
    return k;
}

void fill_normal(Rng& rng, std::vector<double>& v, double sd) {
    for (double& x : v) x = sd * rng.normal();
}

}  // namespace

// ---- config ----

void EncoderConfig::validate() const {
    if (patch_embed_size == 0) throw std::invalid_argument("EncoderConfig: patch_embed_size must be >= 1");
    if (embed_dim == 0) throw std::invalid_argument("EncoderConfig: embed_dim must be >= 1");
    if (mlp_ratio == 0) throw std::invalid_argument("EncoderConfig: mlp_ratio must be >= 1");
    for (std::size_t a = 0; a < 3; ++a)
        if (window[a] == 0) throw std::invalid_argument("EncoderConfig: window extents must be >= 1");
    for (std::size_t s = 0; s < 4; ++s) {
        if (depths[s] == 0) throw std::invalid_argument("EncoderConfig: every stage needs at least one block");
        if (heads[s] == 0 || stage_dim(s) % heads[s] != 0)
            throw std::invalid_argument("EncoderConfig: stage " + std::to_string(s) + " width " + std::to_string(stage_dim(s)) +
                                        " is not divisible by " + std::to_string(heads[s]) + " heads");
    }
}

Dims EncoderConfig::resolve_band(const Dims& input) const {
    const Dims band = band_dims.count() == 0 ? fourier::default_band(input) : band_dims;
    if (band.w == 0 || band.h == 0 || band.d == 0 || band.w > input.w || band.h > input.h || band.d > input.d)
        throw std::invalid_argument("EncoderConfig: band " + to_string(band) + " does not fit input " + to_string(input));
    return band;
}

// ---- parameters ----

void ModelParams::add(std::string name, ad::Shape shape, std::vector<double> value) {
    if (value.size() != ad::numel(shape)) throw std::invalid_argument("ModelParams: " + name + " has the wrong length");
    if (index_.count(name)) throw std::invalid_argument("ModelParams: duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({std::move(name), std::move(shape), std::move(value)});
}

const Parameter& ModelParams::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ModelParams: no parameter " + name);
    return params_[it->second];
}

Parameter& ModelParams::get(const std::string& name) {
    return const_cast<Parameter&>(static_cast<const ModelParams&>(*this).get(name));
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& p : params_)
        for (double v : p.value)
            if (!std::isfinite(v)) return false;
    return true;
}

BoundParams::BoundParams(ad::Tape& tape, const ModelParams& params) {
    for (const auto& p : params.list()) {
        index_[p.name] = tensors_.size();
        names_.push_back(p.name);
        tensors_.push_back(tape.parameter(p.shape, p.value));
    }
}

const ad::Tensor& BoundParams::operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("BoundParams: no parameter " + name);
    return tensors_[it->second];
}

std::vector<std::vector<double>> BoundParams::gradients() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) {
        auto g = t.grad();
        std::vector<double> v(g.begin(), g.end());
        v.resize(t.size(), 0.0);
        out.push_back(std::move(v));
    }
    return out;
}

// ---- building blocks ----

Extent3 padded_extent(const Extent3& grid, const Extent3& window) {
    return {ceil_to(grid[0], window[0]), ceil_to(grid[1], window[1]), ceil_to(grid[2], window[2])};
}

Extent3 shift_for(const Extent3& padded, const Extent3& window) {
    Extent3 s{};
    for (std::size_t a = 0; a < 3; ++a) s[a] = padded[a] > window[a] ? window[a] / 2 : 0;
    return s;
}

std::size_t relative_table_size(const Extent3& w) { return (2 * w[0] - 1) * (2 * w[1] - 1) * (2 * w[2] - 1); }

std::vector<std::int64_t> relative_position_index(const Extent3& w) {
    const std::size_t t = product(w);
    std::vector<std::int64_t> idx(t * t);
    for (std::size_t q = 0; q < t; ++q) {
        const std::size_t qx = q % w[0], qy = (q / w[0]) % w[1], qz = q / (w[0] * w[1]);
        for (std::size_t k = 0; k < t; ++k) {
            const std::size_t kx = k % w[0], ky = (k / w[0]) % w[1], kz = k / (w[0] * w[1]);
            const std::size_t dx = qx + w[0] - 1 - kx, dy = qy + w[1] - 1 - ky, dz = qz + w[2] - 1 - kz;
            idx[q * t + k] = static_cast<std::int64_t>(dx + (2 * w[0] - 1) * (dy + (2 * w[1] - 1) * dz));
        }
    }
    return idx;
}

std::vector<double> shifted_window_mask(const Extent3& padded, const Extent3& window, const Extent3& shift) {
    // Region label per axis: [0, P-M), [P-M, P-s), [P-s, P).
    auto region = [&](std::size_t a, std::size_t p) -> std::size_t {
        if (p < padded[a] - window[a]) return 0;
        if (p < padded[a] - shift[a]) return 1;
        return 2;
    };
    const Extent3 nw{padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
    const std::size_t t = product(window);
    std::vector<double> mask(product(nw) * t * t, 0.0);
    std::vector<std::size_t> label(t);
    for (std::size_t wz = 0; wz < nw[2]; ++wz)
        for (std::size_t wy = 0; wy < nw[1]; ++wy)
            for (std::size_t wx = 0; wx < nw[0]; ++wx) {
                const std::size_t w = wx + nw[0] * (wy + nw[1] * wz);
                for (std::size_t i = 0; i < t; ++i) {
                    const std::size_t x = wx * window[0] + i % window[0];
                    const std::size_t y = wy * window[1] + (i / window[0]) % window[1];
                    const std::size_t z = wz * window[2] + i / (window[0] * window[1]);
                    label[i] = region(0, x) + 3 * (region(1, y) + 3 * region(2, z));
                }
                for (std::size_t i = 0; i < t; ++i)
                    for (std::size_t j = 0; j < t; ++j)
                        if (label[i] != label[j]) mask[(w * t + i) * t + j] = -std::numeric_limits<double>::infinity();
            }
    return mask;
}

std::vector<std::int64_t> window_partition_index(const Extent3& padded, const Extent3& window, std::size_t channels) {
    const Extent3 nw{padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
    const std::size_t t = product(window);
    Index idx(product(padded) * channels);
    for (std::size_t w = 0; w < product(nw); ++w) {
        const std::size_t wx = w % nw[0], wy = (w / nw[0]) % nw[1], wz = w / (nw[0] * nw[1]);
        for (std::size_t i = 0; i < t; ++i) {
            const std::size_t x = wx * window[0] + i % window[0];
            const std::size_t y = wy * window[1] + (i / window[0]) % window[1];
            const std::size_t z = wz * window[2] + i / (window[0] * window[1]);
            const std::size_t src = x + padded[0] * (y + padded[1] * z);
            for (std::size_t c = 0; c < channels; ++c)
                idx[(w * t + i) * channels + c] = static_cast<std::int64_t>(src * channels + c);
        }
    }
    return idx;
}

TokenGrid patch_embed(ad::Tape& tape, const Volume3& fixed, const Volume3& moving, std::size_t p, const ad::Tensor& weight,
                      const ad::Tensor& bias) {
    if (!(fixed.dims() == moving.dims()))
        throw std::invalid_argument("patch_embed: fixed " + to_string(fixed.dims()) + " and moving " + to_string(moving.dims()) + " differ");
    if (p == 0) throw std::invalid_argument("patch_embed: patch size must be >= 1");
    const Dims& dims = fixed.dims();
    const Extent3 grid{ceil_to(dims.w, p) / p, ceil_to(dims.h, p) / p, ceil_to(dims.d, p) / p};
    // Symmetric zero padding: the low side gets the smaller half.
    const std::size_t lo[3] = {(grid[0] * p - dims.w) / 2, (grid[1] * p - dims.h) / 2, (grid[2] * p - dims.d) / 2};
    const std::size_t p3 = p * p * p;
    const std::size_t features = 2 * p3;
    std::vector<double> patches(product(grid) * features, 0.0);
    const Volume3* sources[2] = {&fixed, &moving};
    for (std::size_t tz = 0; tz < grid[2]; ++tz)
        for (std::size_t ty = 0; ty < grid[1]; ++ty)
            for (std::size_t tx = 0; tx < grid[0]; ++tx) {
                const std::size_t token = tx + grid[0] * (ty + grid[1] * tz);
                for (std::size_t dz = 0; dz < p; ++dz)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx) {
                            const auto x = static_cast<std::ptrdiff_t>(tx * p + dx) - static_cast<std::ptrdiff_t>(lo[0]);
                            const auto y = static_cast<std::ptrdiff_t>(ty * p + dy) - static_cast<std::ptrdiff_t>(lo[1]);
                            const auto z = static_cast<std::ptrdiff_t>(tz * p + dz) - static_cast<std::ptrdiff_t>(lo[2]);
                            if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::ptrdiff_t>(dims.w) ||
                                y >= static_cast<std::ptrdiff_t>(dims.h) || z >= static_cast<std::ptrdiff_t>(dims.d))
                                continue;
                            const std::size_t offset = dx + p * (dy + p * dz);
                            for (std::size_t c = 0; c < 2; ++c)
                                patches[token * features + c * p3 + offset] =
                                    sources[c]->at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
                        }
            }
    const ad::Tensor input = tape.constant({product(grid), features}, std::move(patches));
    return {ad::linear(input, weight, bias), grid};
}

TokenGrid window_attention(const TokenGrid& x, const Extent3& window, const Extent3& shift, std::size_t heads,
                           const AttentionWeights& w, ad::Tensor* probs_out) {
    const std::size_t c = x.channels();
    if (heads == 0 || c % heads != 0) throw ad::ShapeError("window_attention: " + std::to_string(c) + " channels over " + std::to_string(heads) + " heads");
    const Extent3 padded = padded_extent(x.grid, window);
    for (std::size_t a = 0; a < 3; ++a) {
        if (window[a] == 0 || window[a] > padded[a]) throw ad::ShapeError("window_attention: window larger than padded grid");
        if (shift[a] >= window[a] && shift[a] != 0) throw ad::ShapeError("window_attention: shift must be smaller than the window");
    }
    const bool shifted = shift[0] || shift[1] || shift[2];
    const std::size_t t = product(window);
    const std::size_t nw = product(padded) / t;
    const std::size_t d = c / heads;

    ad::Tensor grid = gather(x.tokens, pad_index(x.grid, padded, c), {product(padded), c});
    if (shifted) grid = roll_grid(grid, padded, shift, -1);
    const Index part = window_partition_index(padded, window, c);
    const ad::Tensor windows = gather(grid, part, {nw * t, c});

    const ad::Tensor qkv = ad::reshape(ad::linear(windows, w.qkv_weight, w.qkv_bias), {nw, t, 3, heads, d});
    const ad::Tensor split = ad::permute(qkv, {2, 0, 3, 1, 4});  // [3, nW, h, T, d]
    auto part_of = [&](std::size_t i) { return ad::reshape(ad::slice(split, 0, i, 1), {nw * heads, t, d}); };
    const ad::Tensor q = ad::scalar_mul(part_of(0), 1.0 / std::sqrt(static_cast<double>(d)));
    const ad::Tensor k = part_of(1);
    const ad::Tensor v = part_of(2);

    ad::Tensor logits = ad::reshape(ad::batched_matmul(q, k, true), {nw, heads, t, t});
    const auto rel = relative_position_index(window);
    if (w.rel_bias.shape() != ad::Shape{relative_table_size(window), heads})
        throw ad::ShapeError("window_attention: relative bias table " + ad::to_string(w.rel_bias.shape()) + " does not fit window");
    Index bias_idx(heads * t * t);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < t * t; ++i) bias_idx[h * t * t + i] = rel[i] * static_cast<std::int64_t>(heads) + static_cast<std::int64_t>(h);
    logits = ad::add(logits, gather(w.rel_bias, std::move(bias_idx), {heads, t, t}));
    if (shifted) logits = ad::add(logits, x.tokens.tape().constant({nw, 1, t, t}, shifted_window_mask(padded, window, shift)));
    const ad::Tensor probs = ad::softmax(logits, 3);
    if (probs_out) *probs_out = probs;

    const ad::Tensor attended = ad::batched_matmul(ad::reshape(probs, {nw * heads, t, t}), v);       // [nW*h, T, d]
    const ad::Tensor merged = ad::reshape(ad::permute(ad::reshape(attended, {nw, heads, t, d}), {0, 2, 1, 3}), {nw * t, c});
    const ad::Tensor projected = ad::linear(merged, w.proj_weight, w.proj_bias);

    // Inverse of the partition gather.
    Index reverse(part.size());
    for (std::size_t i = 0; i < part.size(); ++i) reverse[static_cast<std::size_t>(part[i])] = static_cast<std::int64_t>(i);
    ad::Tensor back = gather(projected, std::move(reverse), {product(padded), c});
    if (shifted) back = roll_grid(back, padded, shift, +1);
    return {gather(back, crop_index(x.grid, padded, c), {x.count(), c}), x.grid};
}

TokenGrid patch_merging(const TokenGrid& x, const ad::Tensor& gamma, const ad::Tensor& beta, const ad::Tensor& reduction) {
    const std::size_t c = x.channels();
    const Extent3 out{(x.grid[0] + 1) / 2, (x.grid[1] + 1) / 2, (x.grid[2] + 1) / 2};
    Index idx(product(out) * 8 * c, -1);
    for (std::size_t z = 0; z < out[2]; ++z)
        for (std::size_t y = 0; y < out[1]; ++y)
            for (std::size_t xx = 0; xx < out[0]; ++xx) {
                const std::size_t token = xx + out[0] * (y + out[1] * z);
                for (std::size_t b = 0; b < 8; ++b) {
                    const std::size_t sx = 2 * xx + (b & 1), sy = 2 * y + ((b >> 1) & 1), sz = 2 * z + ((b >> 2) & 1);
                    if (sx >= x.grid[0] || sy >= x.grid[1] || sz >= x.grid[2]) continue;
                    const std::size_t src = sx + x.grid[0] * (sy + x.grid[1] * sz);
                    for (std::size_t ch = 0; ch < c; ++ch)
                        idx[(token * 8 + b) * c + ch] = static_cast<std::int64_t>(src * c + ch);
                }
            }
    const ad::Tensor stacked = gather(x.tokens, std::move(idx), {product(out), 8 * c});
    return {ad::linear(ad::layer_norm(stacked, gamma, beta), reduction, ad::Tensor{}), out};
}

ad::Tensor resize_trilinear(const ad::Tensor& x, const Dims& out) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ad::ShapeError("resize_trilinear: expected [C, gz, gy, gx], got " + ad::to_string(s));
    const std::size_t channels = s[0];
    const Dims in{s[3], s[2], s[1]};
    auto kernels = std::make_shared<std::vector<std::vector<double>>>();
    kernels->push_back(interp_kernel(out.w, in.w));
    kernels->push_back(interp_kernel(out.h, in.h));
    kernels->push_back(interp_kernel(out.d, in.d));
    std::vector<double> result;
    result.reserve(channels * out.count());
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const auto r = detail::apply_separable(kernels->data(), in, out, x.value().subspan(ch * in.count(), in.count()));
        result.insert(result.end(), r.begin(), r.end());
    }
    return x.tape().record({channels, out.d, out.h, out.w}, std::move(result), {x}, [x, kernels, in, out, channels](std::span<const double> g) {
        const std::vector<double> adj[3] = {detail::transpose((*kernels)[0], out.w, in.w), detail::transpose((*kernels)[1], out.h, in.h),
                                            detail::transpose((*kernels)[2], out.d, in.d)};
        auto gx = x.grad_accumulator();
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const auto r = detail::apply_separable(adj, out, in, g.subspan(ch * out.count(), out.count()));
            for (std::size_t i = 0; i < r.size(); ++i) gx[ch * in.count() + i] += r[i];
        }
    });
}

// ---- encoder ----

SwinEncoder::SwinEncoder(EncoderConfig config) : config_(config) { config_.validate(); }

ModelParams SwinEncoder::init_params(std::uint64_t seed, double head_std) const {
    Rng rng(seed);
    ModelParams params;
    auto normal = [&](std::string name, ad::Shape shape, double sd) {
        std::vector<double> v(ad::numel(shape));
        fill_normal(rng, v, sd);
        params.add(std::move(name), std::move(shape), std::move(v));
    };
    auto constant = [&](std::string name, ad::Shape shape, double value) {
        const std::size_t n = ad::numel(shape);
        params.add(std::move(name), std::move(shape), std::vector<double>(n, value));
    };
    constexpr double sd = 0.02;
    const std::size_t p = config_.patch_embed_size;
    normal("embed.weight", {2 * p * p * p, config_.embed_dim}, sd);
    constant("embed.bias", {config_.embed_dim}, 0.0);
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t c = config_.stage_dim(s);
        const std::size_t hidden = c * config_.mlp_ratio;
        for (std::size_t b = 0; b < config_.depths[s]; ++b) {
            const std::string pre = prefix(s, b);
            constant(pre + "norm1.gamma", {c}, 1.0);
            constant(pre + "norm1.beta", {c}, 0.0);
            normal(pre + "attn.qkv.weight", {c, 3 * c}, sd);
            constant(pre + "attn.qkv.bias", {3 * c}, 0.0);
            normal(pre + "attn.proj.weight", {c, c}, sd);
            constant(pre + "attn.proj.bias", {c}, 0.0);
            normal(pre + "attn.rel_bias", {relative_table_size(config_.window), config_.heads[s]}, sd);
            constant(pre + "norm2.gamma", {c}, 1.0);
            constant(pre + "norm2.beta", {c}, 0.0);
            normal(pre + "mlp.fc1.weight", {c, hidden}, sd);
            constant(pre + "mlp.fc1.bias", {hidden}, 0.0);
            normal(pre + "mlp.fc2.weight", {hidden, c}, sd);
            constant(pre + "mlp.fc2.bias", {c}, 0.0);
        }
        if (s < 3) {
            const std::string pre = "stage" + std::to_string(s) + ".merge.";
            constant(pre + "norm.gamma", {8 * c}, 1.0);
            constant(pre + "norm.beta", {8 * c}, 0.0);
            normal(pre + "reduction.weight", {8 * c, 2 * c}, sd);
        }
    }
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string pre = "head" + std::to_string(s) + ".";
        const std::size_t c = config_.stage_dim(s);
        constant(pre + "norm.gamma", {c}, 1.0);
        constant(pre + "norm.beta", {c}, 0.0);
        normal(pre + "weight", {c, 3}, head_std);
        constant(pre + "bias", {3}, 0.0);
    }
    return params;
}

TokenGrid SwinEncoder::embed(ad::Tape& tape, const BoundParams& p, const Volume3& fixed, const Volume3& moving) const {
    return patch_embed(tape, fixed, moving, config_.patch_embed_size, p["embed.weight"], p["embed.bias"]);
}

TokenGrid SwinEncoder::block(const TokenGrid& x, std::size_t s, std::size_t b, const BoundParams& p) const {
    const std::string pre = prefix(s, b);
    const Extent3 padded = padded_extent(x.grid, config_.window);
    const Extent3 shift = b % 2 == 1 ? shift_for(padded, config_.window) : Extent3{0, 0, 0};
    const AttentionWeights w{p[pre + "attn.qkv.weight"], p[pre + "attn.qkv.bias"], p[pre + "attn.proj.weight"],
                             p[pre + "attn.proj.bias"], p[pre + "attn.rel_bias"]};
    const ad::Tensor normed = ad::layer_norm(x.tokens, p[pre + "norm1.gamma"], p[pre + "norm1.beta"]);
    const TokenGrid attended = window_attention({normed, x.grid}, config_.window, shift, config_.heads[s], w);
    const ad::Tensor h = ad::add(x.tokens, attended.tokens);
    const ad::Tensor hidden = ad::gelu(ad::linear(ad::layer_norm(h, p[pre + "norm2.gamma"], p[pre + "norm2.beta"]),
                                                  p[pre + "mlp.fc1.weight"], p[pre + "mlp.fc1.bias"]));
    return {ad::add(h, ad::linear(hidden, p[pre + "mlp.fc2.weight"], p[pre + "mlp.fc2.bias"])), x.grid};
}

TokenGrid SwinEncoder::stage(const TokenGrid& x, std::size_t s, const BoundParams& p) const {
    if (s >= 4) throw std::out_of_range("SwinEncoder::stage: index " + std::to_string(s));
    TokenGrid out = x;
    for (std::size_t b = 0; b < config_.depths[s]; ++b) out = block(out, s, b, p);
    return out;
}

TokenGrid SwinEncoder::merge(const TokenGrid& x, std::size_t s, const BoundParams& p) const {
    const std::string pre = "stage" + std::to_string(s) + ".merge.";
    return patch_merging(x, p[pre + "norm.gamma"], p[pre + "norm.beta"], p[pre + "reduction.weight"]);
}

ad::Tensor SwinEncoder::forward(ad::Tape& tape, const BoundParams& p, const Volume3& fixed, const Volume3& moving) const {
    const Dims band = config_.resolve_band(fixed.dims());
    TokenGrid x = embed(tape, p, fixed, moving);
    ad::Tensor field;
    for (std::size_t s = 0; s < 4; ++s) {
        x = stage(x, s, p);
        const ad::Tensor contribution = head(x, s, p, band);
        field = field.valid() ? ad::add(field, contribution) : contribution;
        if (s < 3) x = merge(x, s, p);
    }
    return field;
}

ad::Tensor SwinEncoder::head(const TokenGrid& x, std::size_t s, const BoundParams& p, const Dims& band) const {
    const std::string pre = "head" + std::to_string(s) + ".";
    const ad::Tensor normed = ad::layer_norm(x.tokens, p[pre + "norm.gamma"], p[pre + "norm.beta"]);
    const ad::Tensor out = ad::linear(normed, p[pre + "weight"], p[pre + "bias"]);  // [N, 3]
    const ad::Tensor channels = ad::reshape(ad::permute(out, {1, 0}), {3, x.grid[2], x.grid[1], x.grid[0]});
    return resize_trilinear(channels, band);
}

}  // namespace neureg
