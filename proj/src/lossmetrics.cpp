#include "neureg/lossmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <stdexcept>

namespace neureg {

namespace {

Dims volume_dims(const ad::Tensor& t, const char* op) {
    const auto& s = t.shape();
    if (s.size() != 3) throw ad::ShapeError(std::string(op) + ": expected [D, H, W], got " + ad::to_string(s));
    return {s[2], s[1], s[0]};
}

// Sums over the cube of half-width r around each voxel, clipped to the grid.
// Three 1-D passes that add each window directly: a summed-area table would
// subtract whole-volume prefix sums and lose digits to cancellation.
class BoxSum {
public:
    BoxSum(const Dims& dims, std::size_t radius) : dims_(dims), r_(radius), a_(dims.count()), b_(dims.count()) {}

    void operator()(const double* in, double* out) {
        pass(in, a_.data(), 1, dims_.w);
        pass(a_.data(), b_.data(), dims_.w, dims_.h);
        pass(b_.data(), out, dims_.w * dims_.h, dims_.d);
    }

    double count(std::size_t i, std::size_t j, std::size_t k) const {
        return static_cast<double>(extent(i, dims_.w) * extent(j, dims_.h) * extent(k, dims_.d));
    }

private:
    std::size_t extent(std::size_t p, std::size_t n) const { return std::min(p + r_ + 1, n) - (p > r_ ? p - r_ : 0); }

    // Window sums along one axis with the given stride and length.
    void pass(const double* in, double* out, std::size_t stride, std::size_t n) const {
        const std::size_t total = dims_.count();
        for (std::size_t base = 0; base < total; ++base) {
            if ((base / stride) % n != 0) continue;  // visit each line once, from its first voxel
            for (std::size_t p = 0; p < n; ++p) {
                const std::size_t lo = p > r_ ? p - r_ : 0, hi = std::min(p + r_ + 1, n);
                double acc = 0.0;
                for (std::size_t q = lo; q < hi; ++q) acc += in[base + q * stride];
                out[base + p * stride] = acc;
            }
        }
    }

    Dims dims_;
    std::size_t r_;
    std::vector<double> a_, b_;
};

// Local window statistics used by NCC, with the intermediate terms the backward pass needs.
struct NccState {
    std::vector<double> cc, mu_i, mu_j, a, bi, bj;
    std::vector<double> i_centered, j_centered;
};

// NCC is unchanged by a constant offset; removing the global mean keeps the
// window sums small so that cross - s_i * mu_j does not cancel.
std::vector<double> centered(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    std::vector<double> out(v.size());
    for (std::size_t p = 0; p < v.size(); ++p) out[p] = v[p] - mean;
    return out;
}

NccState ncc_forward(const Dims& dims, std::size_t window, const double* I, const double* J) {
    const std::size_t n = dims.count();
    BoxSum box(dims, window / 2);
    std::vector<double> s_i(n), s_j(n), s_ii(n), s_jj(n), s_ij(n), tmp(n);
    box(I, s_i.data());
    box(J, s_j.data());
    for (std::size_t p = 0; p < n; ++p) tmp[p] = I[p] * I[p];
    box(tmp.data(), s_ii.data());
    for (std::size_t p = 0; p < n; ++p) tmp[p] = J[p] * J[p];
    box(tmp.data(), s_jj.data());
    for (std::size_t p = 0; p < n; ++p) tmp[p] = I[p] * J[p];
    box(tmp.data(), s_ij.data());

    NccState st;
    st.cc.resize(n);
    st.mu_i.resize(n);
    st.mu_j.resize(n);
    st.a.resize(n);
    st.bi.resize(n);
    st.bj.resize(n);
    for (std::size_t k = 0; k < dims.d; ++k)
        for (std::size_t j = 0; j < dims.h; ++j)
            for (std::size_t i = 0; i < dims.w; ++i) {
                const std::size_t p = dims.index(i, j, k);
                const double cnt = box.count(i, j, k);
                const double mi = s_i[p] / cnt, mj = s_j[p] / cnt;
                const double cross = s_ij[p] - s_i[p] * mj;
                const double var_i = s_ii[p] - s_i[p] * mi;
                const double var_j = s_jj[p] - s_j[p] * mj;
                const double den = var_i * var_j + kNccEps;
                st.cc[p] = cross * cross / den;
                st.mu_i[p] = mi;
                st.mu_j[p] = mj;
                st.a[p] = 2.0 * cross / den;
                st.bi[p] = -cross * cross * var_j / (den * den);
                st.bj[p] = -cross * cross * var_i / (den * den);
            }
    return st;
}

}  // namespace

std::string to_string(Similarity s) { return s == Similarity::ncc ? "ncc" : "mse"; }

Similarity similarity_from_string(const std::string& name) {
    if (name == "ncc" || name == "NCC") return Similarity::ncc;
    if (name == "mse" || name == "MSE") return Similarity::mse;
    throw std::invalid_argument("unknown similarity '" + name + "' (expected mse or ncc)");
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("LossConfig: lambda must be >= 0");
    if (ncc_window < 3 || ncc_window % 2 == 0) throw std::invalid_argument("LossConfig: ncc_window must be odd and >= 3");
}

ad::Tensor mse_loss(const ad::Tensor& fixed, const ad::Tensor& warped) {
    if (fixed.shape() != warped.shape())
        throw ad::ShapeError("mse_loss: " + ad::to_string(fixed.shape()) + " vs " + ad::to_string(warped.shape()));
    return ad::mean(ad::square(ad::sub(fixed, warped)));
}

ad::Tensor ncc_loss(const ad::Tensor& fixed, const ad::Tensor& warped, std::size_t window) {
    if (fixed.shape() != warped.shape())
        throw ad::ShapeError("ncc_loss: " + ad::to_string(fixed.shape()) + " vs " + ad::to_string(warped.shape()));
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("ncc_loss: window must be odd");
    const Dims dims = volume_dims(fixed, "ncc_loss");
    std::vector<double> ic = centered(fixed.value()), jc = centered(warped.value());
    auto st = std::make_shared<NccState>(ncc_forward(dims, window, ic.data(), jc.data()));
    st->i_centered = std::move(ic);
    st->j_centered = std::move(jc);
    double total = 0.0;
    for (double c : st->cc) total += c;
    const double n = static_cast<double>(dims.count());

    return fixed.tape().record({1}, {-total / n}, {fixed, warped}, [=](std::span<const double> g) {
        const std::size_t count = dims.count();
        const double scale = -g[0] / n;
        BoxSum box(dims, window / 2);
        std::vector<double> tmp(count), box_a(count), box_a_mu(count), box_b(count), box_b_mu(count);
        const double* I = st->i_centered.data();
        const double* J = st->j_centered.data();
        box(st->a.data(), box_a.data());
        // d/dJ: I_q box(A) - box(A muI) + 2 J_q box(Bj) - 2 box(Bj muJ)
        if (warped.requires_grad()) {
            for (std::size_t p = 0; p < count; ++p) tmp[p] = st->a[p] * st->mu_i[p];
            box(tmp.data(), box_a_mu.data());
            box(st->bj.data(), box_b.data());
            for (std::size_t p = 0; p < count; ++p) tmp[p] = st->bj[p] * st->mu_j[p];
            box(tmp.data(), box_b_mu.data());
            auto gj = warped.grad_accumulator();
            for (std::size_t q = 0; q < count; ++q)
                gj[q] += scale * (I[q] * box_a[q] - box_a_mu[q] + 2.0 * (J[q] * box_b[q] - box_b_mu[q]));
        }
        if (fixed.requires_grad()) {
            for (std::size_t p = 0; p < count; ++p) tmp[p] = st->a[p] * st->mu_j[p];
            box(tmp.data(), box_a_mu.data());
            box(st->bi.data(), box_b.data());
            for (std::size_t p = 0; p < count; ++p) tmp[p] = st->bi[p] * st->mu_i[p];
            box(tmp.data(), box_b_mu.data());
            auto gi = fixed.grad_accumulator();
            for (std::size_t q = 0; q < count; ++q)
                gi[q] += scale * (J[q] * box_a[q] - box_a_mu[q] + 2.0 * (I[q] * box_b[q] - box_b_mu[q]));
        }
    });
}

ad::Tensor smoothness_reg(const ad::Tensor& field) {
    const auto& s = field.shape();
    if (s.size() != 4 || s[0] != 3) throw ad::ShapeError("smoothness_reg: expected [3, D, H, W], got " + ad::to_string(s));
    const Dims dims{s[3], s[2], s[1]};
    if (dims.w < 2 || dims.h < 2 || dims.d < 2) throw std::invalid_argument("smoothness_reg: need at least 2 voxels per axis");
    const std::size_t n = dims.count();
    const std::size_t step[3] = {1, dims.w, dims.w * dims.h};
    // Number of forward-difference pairs along each axis (per channel).
    const double pairs[3] = {static_cast<double>((dims.w - 1) * dims.h * dims.d),
                             static_cast<double>(dims.w * (dims.h - 1) * dims.d),
                             static_cast<double>(dims.w * dims.h * (dims.d - 1))};
    const auto fv = field.value();
    double total = 0.0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double* u = fv.data() + c * n;
            for (std::size_t k = 0; k < dims.d; ++k)
                for (std::size_t j = 0; j < dims.h; ++j)
                    for (std::size_t i = 0; i < dims.w; ++i) {
                        const std::size_t pos = axis == 0 ? i : (axis == 1 ? j : k);
                        if (pos + 1 >= dims[axis]) continue;
                        const std::size_t p = dims.index(i, j, k);
                        const double d = u[p + step[axis]] - u[p];
                        acc += d * d;
                    }
        }
        total += acc / pairs[axis];
    }
    return field.tape().record({1}, {total}, {field}, [=](std::span<const double> g) {
        auto gf = field.grad_accumulator();
        const auto fv = field.value();
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const double w = 2.0 * g[0] / pairs[axis];
            for (std::size_t c = 0; c < 3; ++c) {
                const double* u = fv.data() + c * n;
                double* gu = gf.data() + c * n;
                for (std::size_t k = 0; k < dims.d; ++k)
                    for (std::size_t j = 0; j < dims.h; ++j)
                        for (std::size_t i = 0; i < dims.w; ++i) {
                            const std::size_t pos = axis == 0 ? i : (axis == 1 ? j : k);
                            if (pos + 1 >= dims[axis]) continue;
                            const std::size_t p = dims.index(i, j, k);
                            const double d = w * (u[p + step[axis]] - u[p]);
                            gu[p + step[axis]] += d;
                            gu[p] -= d;
                        }
            }
        }
    });
}

LossTerms total_loss(const ad::Tensor& fixed, const ad::Tensor& warped, const ad::Tensor& field, const LossConfig& config) {
    config.validate();
    LossTerms terms;
    terms.similarity = config.similarity == Similarity::ncc ? ncc_loss(fixed, warped, config.ncc_window) : mse_loss(fixed, warped);
    terms.regularizer = smoothness_reg(field);
    terms.total = ad::add(terms.similarity, ad::scalar_mul(terms.regularizer, config.lambda));
    return terms;
}

DiceReport dice(const LabelVolume& a, const LabelVolume& b) {
    if (!(a.dims() == b.dims())) throw std::invalid_argument("dice: dims " + to_string(a.dims()) + " and " + to_string(b.dims()) + " differ");
    std::set<std::uint16_t> labels;
    for (auto l : a.label_set())
        if (l != 0) labels.insert(l);
    for (auto l : b.label_set())
        if (l != 0) labels.insert(l);
    std::map<std::uint16_t, std::size_t> count_a, count_b, overlap;
    for (std::size_t p = 0; p < a.size(); ++p) {
        const auto la = a.data()[p], lb = b.data()[p];
        if (la != 0) ++count_a[la];
        if (lb != 0) ++count_b[lb];
        if (la != 0 && la == lb) ++overlap[la];
    }
    DiceReport report;
    if (labels.empty()) return report;
    double total = 0.0;
    for (auto l : labels) {
        const double d = 2.0 * static_cast<double>(overlap[l]) / static_cast<double>(count_a[l] + count_b[l]);
        report.per_label[l] = d;
        total += d;
    }
    report.mean = total / static_cast<double>(labels.size());
    return report;
}

double ssim3(const Volume3& a, const Volume3& b, std::size_t window) {
    if (!(a.dims() == b.dims())) throw std::invalid_argument("ssim3: dims " + to_string(a.dims()) + " and " + to_string(b.dims()) + " differ");
    const Dims& dims = a.dims();
    if (window % 2 == 0) throw std::invalid_argument("ssim3: window must be odd");
    if (dims.w < window || dims.h < window || dims.d < window)
        throw std::invalid_argument("ssim3: volume " + to_string(dims) + " is smaller than the " + std::to_string(window) + "^3 window");
    const auto [alo, ahi] = a.value_range();
    const auto [blo, bhi] = b.value_range();
    const double lo = std::min(alo, blo), hi = std::max(ahi, bhi);
    const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
    const std::size_t n = dims.count();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t p = 0; p < n; ++p) {
        x[p] = (a.data()[p] - lo) * scale;
        y[p] = (b.data()[p] - lo) * scale;
        xx[p] = x[p] * x[p];
        yy[p] = y[p] * y[p];
        xy[p] = x[p] * y[p];
    }
    // Only voxels whose window fits entirely inside the grid contribute.
    const std::size_t r = window / 2;
    BoxSum box(dims, r);
    std::vector<double> sx(n), sy(n), sxx(n), syy(n), sxy(n);
    box(x.data(), sx.data());
    box(y.data(), sy.data());
    box(xx.data(), sxx.data());
    box(yy.data(), syy.data());
    box(xy.data(), sxy.data());

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double m = static_cast<double>(window * window * window);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t k = r; k + r < dims.d; ++k)
        for (std::size_t j = r; j + r < dims.h; ++j)
            for (std::size_t i = r; i + r < dims.w; ++i) {
                const std::size_t p = dims.index(i, j, k);
                const double mx = sx[p] / m, my = sy[p] / m;
                const double vx = sxx[p] / m - mx * mx;
                const double vy = syy[p] / m - my * my;
                const double cxy = sxy[p] / m - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

}  // namespace neureg
