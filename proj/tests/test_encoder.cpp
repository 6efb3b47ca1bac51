#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "neureg/encoder.hpp"
#include "fd_check.hpp"
#include "test_util.hpp"

using namespace neureg;

namespace {

struct Coord {
    std::size_t x, y, z;
};

Coord token_in_window(std::size_t i, const Extent3& m) { return {i % m[0], (i / m[0]) % m[1], i / (m[0] * m[1])}; }

std::vector<double> values(const ad::Tensor& t) { return {t.value().begin(), t.value().end()}; }

struct RandomAttention {
    ad::Tensor qkv_w, qkv_b, proj_w, proj_b, bias;
    AttentionWeights weights() const { return {qkv_w, qkv_b, proj_w, proj_b, bias}; }
};

RandomAttention random_attention(ad::Tape& tape, Rng& rng, std::size_t c, std::size_t heads, const Extent3& window, double bias_sd) {
    return {tape.constant({c, 3 * c}, testutil::random_vector(rng, 3 * c * c, 0.5)), tape.constant({3 * c}, testutil::random_vector(rng, 3 * c, 0.1)),
            tape.constant({c, c}, testutil::random_vector(rng, c * c, 0.5)), tape.constant({c}, testutil::random_vector(rng, c, 0.1)),
            tape.constant({relative_table_size(window), heads}, testutil::random_vector(rng, relative_table_size(window) * heads, bias_sd))};
}

Volume3 ramp(const Dims& d, double phase) {
    Volume3 v(d);
    for (std::size_t i = 0; i < d.count(); ++i) v.data()[i] = 0.5 + 0.5 * std::sin(0.37 * double(i) + phase);
    return v;
}

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.embed_dim = 4;
    c.depths = {2, 1, 1, 1};
    c.heads = {2, 2, 2, 2};
    c.window = {2, 2, 2};
    c.band_dims = {3, 3, 3};
    return c;
}

}  // namespace

TEST_CASE("config defaults and validation") {
    const EncoderConfig c;
    CHECK(c.patch_embed_size == 2);
    CHECK(c.embed_dim == 16);
    CHECK(c.depths == std::array<std::size_t, 4>{2, 2, 2, 2});
    CHECK(c.heads == std::array<std::size_t, 4>{2, 2, 4, 4});
    CHECK(c.window == Extent3{2, 3, 4});
    CHECK(c.mlp_ratio == 2);
    CHECK(c.resolve_band({32, 40, 48}) == Dims{8, 10, 12});
    CHECK_NOTHROW(c.validate());

    EncoderConfig bad = c;
    bad.window = {2, 0, 4};
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.heads[2] = 3;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.depths[3] = 0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.band_dims = {40, 10, 12};
    CHECK_THROWS(bad.resolve_band({32, 40, 48}));
}

TEST_CASE("relative position table has one entry per 3D offset") {
    const Extent3 m{2, 3, 4};
    CHECK(relative_table_size(m) == 3 * 5 * 7);
    const auto rel = relative_position_index(m);
    const std::size_t t = 24;
    REQUIRE(rel.size() == t * t);
    std::map<std::array<long, 3>, std::int64_t> by_offset;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
            const Coord a = token_in_window(i, m), b = token_in_window(j, m);
            const std::array<long, 3> off{long(a.x) - long(b.x), long(a.y) - long(b.y), long(a.z) - long(b.z)};
            const std::int64_t idx = rel[i * t + j];
            CHECK(idx >= 0);
            CHECK(idx < std::int64_t(relative_table_size(m)));
            auto [it, inserted] = by_offset.emplace(off, idx);
            if (!inserted) CHECK(it->second == idx);
        }
    CHECK(by_offset.size() == relative_table_size(m));
    std::set<std::int64_t> distinct;
    for (const auto& [off, idx] : by_offset) distinct.insert(idx);
    CHECK(distinct.size() == by_offset.size());
}

TEST_CASE("padding and shift arithmetic") {
    CHECK(padded_extent({5, 3, 4}, {2, 3, 4}) == Extent3{6, 3, 4});
    CHECK(padded_extent({1, 1, 1}, {2, 3, 4}) == Extent3{2, 3, 4});
    CHECK(shift_for({6, 6, 4}, {2, 3, 4}) == Extent3{1, 1, 0});
    CHECK(shift_for({2, 3, 4}, {2, 3, 4}) == Extent3{0, 0, 0});
}

TEST_CASE("shifted-window mask agrees with a brute-force neighbour enumeration") {
    // On the rolled grid, two tokens may attend iff rolling them back does not
    // separate them: their rolled offset equals their original offset on every axis.
    for (const Extent3& window : {Extent3{2, 2, 2}, Extent3{2, 4, 2}, Extent3{4, 2, 2}}) {
        const Extent3 padded{4, 4, 4};
        const Extent3 shift = shift_for(padded, window);
        const auto mask = shifted_window_mask(padded, window, shift);
        const Extent3 nw{padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
        const std::size_t t = window[0] * window[1] * window[2];
        REQUIRE(mask.size() == nw[0] * nw[1] * nw[2] * t * t);
        for (std::size_t w = 0; w < nw[0] * nw[1] * nw[2]; ++w) {
            const Coord wc{w % nw[0], (w / nw[0]) % nw[1], w / (nw[0] * nw[1])};
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < t; ++j) {
                    const Coord a = token_in_window(i, window), b = token_in_window(j, window);
                    const std::size_t ra[3] = {wc.x * window[0] + a.x, wc.y * window[1] + a.y, wc.z * window[2] + a.z};
                    const std::size_t rb[3] = {wc.x * window[0] + b.x, wc.y * window[1] + b.y, wc.z * window[2] + b.z};
                    bool neighbours = true;
                    for (std::size_t ax = 0; ax < 3; ++ax) {
                        const long oa = long((ra[ax] + shift[ax]) % padded[ax]), ob = long((rb[ax] + shift[ax]) % padded[ax]);
                        neighbours = neighbours && (long(ra[ax]) - long(rb[ax]) == oa - ob);
                    }
                    const double m = mask[(w * t + i) * t + j];
                    if (neighbours)
                        CHECK(m == 0.0);
                    else
                        CHECK(std::isinf(m));
                }
        }
    }
}

TEST_CASE("patch embedding: shape, zero inputs, asymmetry, mismatch") {
    Rng rng(1);
    ad::Tape tape;
    const std::size_t c = 5;
    const ad::Tensor w = tape.constant({16, c}, testutil::random_vector(rng, 16 * c));
    const auto bias_values = testutil::random_vector(rng, c);
    const ad::Tensor b = tape.constant({c}, bias_values);

    const TokenGrid zero = patch_embed(tape, Volume3({8, 8, 8}), Volume3({8, 8, 8}), 2, w, b);
    CHECK(zero.grid == Extent3{4, 4, 4});
    CHECK(zero.tokens.shape() == ad::Shape{64, c});
    for (std::size_t n = 0; n < 64; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) CHECK(zero.tokens.value()[n * c + ch] == bias_values[ch]);

    const Volume3 f = ramp({8, 8, 8}, 0.0), m = ramp({8, 8, 8}, 1.3);
    CHECK(values(patch_embed(tape, f, m, 2, w, b).tokens) != values(patch_embed(tape, m, f, 2, w, b).tokens));

    CHECK(patch_embed(tape, Volume3({7, 5, 8}), Volume3({7, 5, 8}), 2, w, b).grid == Extent3{4, 3, 4});
    CHECK_THROWS(patch_embed(tape, Volume3({8, 8, 8}), Volume3({8, 8, 6}), 2, w, b));
}

TEST_CASE("a single unshifted window is plain multi-head self-attention") {
    Rng rng(2);
    ad::Tape tape;
    const std::size_t c = 4, heads = 2, d = 2;
    const Extent3 window{2, 3, 2};
    const std::size_t t = 12;
    const auto tokens = testutil::random_vector(rng, t * c);
    const RandomAttention a = random_attention(tape, rng, c, heads, window, 0.0);
    const TokenGrid out = window_attention({tape.constant({t, c}, tokens), window}, window, {0, 0, 0}, heads, a.weights());

    // Reference: explicit loops, no tensors.
    const auto qw = values(a.qkv_w), qb = values(a.qkv_b), pw = values(a.proj_w), pb = values(a.proj_b);
    std::vector<double> qkv(t * 3 * c);
    for (std::size_t n = 0; n < t; ++n)
        for (std::size_t o = 0; o < 3 * c; ++o) {
            double s = qb[o];
            for (std::size_t i = 0; i < c; ++i) s += tokens[n * c + i] * qw[i * 3 * c + o];
            qkv[n * 3 * c + o] = s;
        }
    std::vector<double> merged(t * c, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> logits(t);
            double hi = -1e300;
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < d; ++e) s += qkv[i * 3 * c + h * d + e] * qkv[j * 3 * c + c + h * d + e];
                logits[j] = s / std::sqrt(double(d));
                hi = std::max(hi, logits[j]);
            }
            double z = 0.0;
            for (double& l : logits) z += (l = std::exp(l - hi));
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t e = 0; e < d; ++e) merged[i * c + h * d + e] += logits[j] / z * qkv[j * 3 * c + 2 * c + h * d + e];
        }
    for (std::size_t n = 0; n < t; ++n)
        for (std::size_t o = 0; o < c; ++o) {
            double s = pb[o];
            for (std::size_t i = 0; i < c; ++i) s += merged[n * c + i] * pw[i * c + o];
            CHECK(std::abs(out.tokens.value()[n * c + o] - s) <= 1e-12);
        }
}

TEST_CASE("attention rows sum to one and masked pairs get zero weight") {
    Rng rng(3);
    ad::Tape tape;
    const std::size_t c = 4, heads = 2;
    const Extent3 grid{4, 4, 4}, window{2, 2, 2};
    const Extent3 shift = shift_for(grid, window);
    const RandomAttention a = random_attention(tape, rng, c, heads, window, 1.0);
    ad::Tensor probs;
    (void)window_attention({tape.constant({64, c}, testutil::random_vector(rng, 64 * c)), grid}, window, shift, heads, a.weights(), &probs);
    const auto mask = shifted_window_mask(grid, window, shift);
    const std::size_t t = 8, nw = 8;
    REQUIRE(probs.shape() == ad::Shape{nw, heads, t, t});
    for (std::size_t w = 0; w < nw; ++w)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < t; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    const double p = probs.value()[((w * heads + h) * t + i) * t + j];
                    s += p;
                    if (std::isinf(mask[(w * t + i) * t + j])) CHECK(p == 0.0);
                }
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
}

TEST_CASE("a zero shift on a grid the window tiles exactly equals the unshifted pass") {
    Rng rng(4);
    ad::Tape tape;
    const Extent3 grid{4, 6, 4}, window{2, 3, 4};
    const RandomAttention a = random_attention(tape, rng, 4, 2, window, 0.5);
    const ad::Tensor x = tape.constant({96, 4}, testutil::random_vector(rng, 384));
    CHECK(shift_for(grid, window) == Extent3{1, 1, 0});
    const auto plain = values(window_attention({x, grid}, window, {0, 0, 0}, 2, a.weights()).tokens);
    const auto again = values(window_attention({x, grid}, window, {0, 0, 0}, 2, a.weights()).tokens);
    CHECK(plain == again);
    CHECK(plain != values(window_attention({x, grid}, window, {1, 1, 0}, 2, a.weights()).tokens));
}

TEST_CASE("window attention rejects bad shapes") {
    Rng rng(5);
    ad::Tape tape;
    const RandomAttention a = random_attention(tape, rng, 4, 2, {2, 2, 2}, 0.1);
    const ad::Tensor x = tape.constant({8, 4}, 0.0);
    CHECK_THROWS_AS(window_attention({x, {2, 2, 2}}, {2, 2, 2}, {0, 0, 0}, 3, a.weights()), ad::ShapeError);
    CHECK_THROWS_AS(window_attention({x, {2, 2, 2}}, {2, 2, 2}, {2, 0, 0}, 2, a.weights()), ad::ShapeError);
    CHECK_THROWS_AS(window_attention({x, {2, 2, 2}}, {2, 3, 2}, {0, 0, 0}, 2, a.weights()), ad::ShapeError);
}

TEST_CASE("patch merging halves the grid and doubles the width") {
    Rng rng(6);
    ad::Tape tape;
    const std::size_t c = 3;
    const ad::Tensor gamma = tape.constant({8 * c}, testutil::random_vector(rng, 8 * c));
    const ad::Tensor beta = tape.constant({8 * c}, testutil::random_vector(rng, 8 * c));
    const ad::Tensor red = tape.constant({8 * c, 2 * c}, testutil::random_vector(rng, 16 * c * c));

    // Same token everywhere.
    const auto token = testutil::random_vector(rng, c);
    std::vector<double> constant_field;
    for (int n = 0; n < 64; ++n) constant_field.insert(constant_field.end(), token.begin(), token.end());
    const TokenGrid merged = patch_merging({tape.constant({64, c}, constant_field), {4, 4, 4}}, gamma, beta, red);
    CHECK(merged.grid == Extent3{2, 2, 2});
    CHECK(merged.tokens.shape() == ad::Shape{8, 2 * c});
    for (std::size_t n = 1; n < 8; ++n)
        for (std::size_t ch = 0; ch < 2 * c; ++ch) CHECK(merged.tokens.value()[n * 2 * c + ch] == merged.tokens.value()[ch]);

    CHECK(patch_merging({tape.constant({5 * 3 * 1, c}, 1.0), {5, 3, 1}}, gamma, beta, red).grid == Extent3{3, 2, 1});
}

TEST_CASE("trilinear resize keeps constants, corners, and passes a gradient check") {
    Rng rng(7);
    ad::Tape tape;
    const auto up = values(resize_trilinear(tape.constant({2, 2, 3, 2}, 1.5), {5, 4, 3}));
    for (double v : up) CHECK(std::abs(v - 1.5) <= 1e-15);

    const auto src = testutil::random_vector(rng, 2 * 3 * 4);
    const auto same = values(resize_trilinear(tape.constant({1, 2, 3, 4}, src), {4, 3, 2}));
    CHECK(testutil::max_abs_diff(same, src) <= 1e-15);

    auto loss = [](ad::Tape& t, const std::vector<ad::Tensor>& p) {
        Rng w(8);
        const ad::Tensor out = resize_trilinear(p[0], {5, 7, 3});
        return ad::sum(ad::mul(out, t.constant(out.shape(), testutil::random_vector(w, out.size()))));
    };
    CHECK(ad::grad_check(loss, {{{2, 2, 3, 4}, testutil::random_vector(rng, 48)}}, 1e-5, 1e-4).passed);
}

TEST_CASE("token grids shrink as ceil(input / (patch * 2^s))") {
    const EncoderConfig cfg;
    const SwinEncoder enc(cfg);
    const ModelParams params = enc.init_params(1);
    ad::Tape tape;
    const BoundParams p(tape, params);
    const Dims dims{32, 40, 48};
    TokenGrid x = enc.embed(tape, p, ramp(dims, 0.0), ramp(dims, 0.5));
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t div = cfg.patch_embed_size << s;
        CHECK(x.grid == Extent3{(dims.w + div - 1) / div, (dims.h + div - 1) / div, (dims.d + div - 1) / div});
        CHECK(x.channels() == cfg.stage_dim(s));
        if (s == 0) {
            x = enc.stage(x, s, p);
            CHECK(x.grid == Extent3{16, 20, 24});
        }
        if (s < 3) x = enc.merge(x, s, p);
    }
}

TEST_CASE("a stage alternates unshifted and shifted blocks") {
    // Rebuild a depth-2 stage from the public pieces: block 0 unshifted, block 1 shifted.
    const EncoderConfig cfg = tiny_config();
    const SwinEncoder enc(cfg);
    const ModelParams params = enc.init_params(2, 0.02);
    ad::Tape tape;
    const BoundParams p(tape, params);
    const TokenGrid x0 = enc.embed(tape, p, ramp({8, 8, 8}, 0.1), ramp({8, 8, 8}, 0.9));
    REQUIRE(x0.grid == Extent3{4, 4, 4});
    auto block = [&](const TokenGrid& x, std::size_t b, bool shifted) {
        const std::string pre = "stage0.block" + std::to_string(b) + ".";
        const Extent3 shift = shifted ? shift_for(padded_extent(x.grid, cfg.window), cfg.window) : Extent3{0, 0, 0};
        const AttentionWeights w{p[pre + "attn.qkv.weight"], p[pre + "attn.qkv.bias"], p[pre + "attn.proj.weight"], p[pre + "attn.proj.bias"],
                                 p[pre + "attn.rel_bias"]};
        const ad::Tensor normed = ad::layer_norm(x.tokens, p[pre + "norm1.gamma"], p[pre + "norm1.beta"]);
        const ad::Tensor h = ad::add(x.tokens, window_attention({normed, x.grid}, cfg.window, shift, cfg.heads[0], w).tokens);
        const ad::Tensor hidden = ad::gelu(ad::linear(ad::layer_norm(h, p[pre + "norm2.gamma"], p[pre + "norm2.beta"]),
                                                      p[pre + "mlp.fc1.weight"], p[pre + "mlp.fc1.bias"]));
        return TokenGrid{ad::add(h, ad::linear(hidden, p[pre + "mlp.fc2.weight"], p[pre + "mlp.fc2.bias"])), x.grid};
    };
    const auto stage = values(enc.stage(x0, 0, p).tokens);
    CHECK(stage == values(block(block(x0, 0, false), 1, true).tokens));
    CHECK(stage != values(block(block(x0, 0, false), 1, false).tokens));
    CHECK(stage != values(block(block(x0, 0, true), 1, true).tokens));
}

TEST_CASE("zeroed attention and MLP outputs make a stage the identity") {
    const EncoderConfig cfg = tiny_config();
    const SwinEncoder enc(cfg);
    ModelParams params = enc.init_params(3);
    for (auto& prm : params.list())
        if (prm.name.rfind("stage0.block", 0) == 0 &&
            (prm.name.find("attn.proj") != std::string::npos || prm.name.find("mlp.fc2") != std::string::npos))
            std::fill(prm.value.begin(), prm.value.end(), 0.0);
    ad::Tape tape;
    const BoundParams p(tape, params);
    const TokenGrid x0 = enc.embed(tape, p, ramp({8, 8, 8}, 0.2), ramp({8, 8, 8}, 0.4));
    CHECK(values(enc.stage(x0, 0, p).tokens) == values(x0.tokens));
}

TEST_CASE("forward emits a 3-channel band field for any input dims") {
    EncoderConfig cfg = tiny_config();
    cfg.band_dims = {0, 0, 0};
    const SwinEncoder enc(cfg);
    const ModelParams params = enc.init_params(4, 0.1);
    for (const Dims& d : {Dims{8, 8, 8}, Dims{9, 12, 7}, Dims{16, 10, 12}}) {
        ad::Tape tape;
        const BoundParams p(tape, params);
        const Dims band = cfg.resolve_band(d);
        CHECK(enc.forward(tape, p, ramp(d, 0.0), ramp(d, 1.0)).shape() == ad::Shape{3, band.d, band.h, band.w});
    }
}

TEST_CASE("zero head weights give a zero field; different seeds give different fields") {
    const SwinEncoder enc(tiny_config());
    const Volume3 f = ramp({8, 8, 8}, 0.0), m = ramp({8, 8, 8}, 0.7);
    auto field = [&](const ModelParams& params) {
        ad::Tape tape;
        const BoundParams p(tape, params);
        return values(enc.forward(tape, p, f, m));
    };
    for (double v : field(enc.init_params(5, 0.0))) CHECK(v == 0.0);
    const auto a = field(enc.init_params(5, 0.1)), b = field(enc.init_params(6, 0.1));
    CHECK(testutil::max_abs_diff(a, b) > 0.0);
    CHECK(a == field(enc.init_params(5, 0.1)));
}

TEST_CASE("parameters are named, shaped, and finite") {
    const EncoderConfig cfg;
    const ModelParams params = SwinEncoder(cfg).init_params(7);
    CHECK(params.all_finite());
    for (std::size_t s = 0; s < 4; ++s)
        CHECK(params.get("stage" + std::to_string(s) + ".block0.attn.rel_bias").shape == ad::Shape{relative_table_size(cfg.window), cfg.heads[s]});
    CHECK(params.get("embed.weight").shape == ad::Shape{16, 16});
    CHECK_THROWS(params.get("no.such.parameter"));
    std::size_t total = 0;
    for (const auto& prm : params.list()) total += prm.value.size();
    CHECK(total == params.scalar_count());
}

TEST_CASE("gradients reach the first stage and match finite differences") {
    const SwinEncoder enc(tiny_config());
    const ModelParams params = enc.init_params(8, 0.2);
    const Volume3 f = ramp({8, 8, 8}, 0.0), m = ramp({8, 8, 8}, 0.6);
    Rng w(9);
    const auto weights = testutil::random_vector(w, 27 * 3);
    auto loss = [&](ad::Tape& t, const BoundParams& p) {
        const ad::Tensor out = enc.forward(t, p, f, m);
        return ad::sum(ad::mul(out, t.constant(out.shape(), weights)));
    };
    const auto stage0 = testutil::fd_check_params(params, loss, 40, 10, 1e-5, 1e-8, "stage0.");
    INFO("stage0 max rel error " << stage0.max_rel_error);
    CHECK(stage0.nonzero > 0);
    CHECK(stage0.max_rel_error <= 1e-4);
    const auto all = testutil::fd_check_params(params, loss, 60, 11);
    INFO("overall max rel error " << all.max_rel_error);
    CHECK(all.max_rel_error <= 1e-4);
}
