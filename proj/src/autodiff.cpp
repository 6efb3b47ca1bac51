#include "neureg/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neureg::ad {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = false;
    BackwardFn backward;
};

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw ShapeError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// Strides of a and b over the broadcast output (0 on broadcast axes).
struct Broadcast {
    Shape out;
    std::vector<std::size_t> sa;
    std::vector<std::size_t> sb;
    bool same = false;

    // Calls f(i, ia, ib) for every output element in order.
    template <typename F>
    void for_each(F&& f) const {
        const std::size_t n = numel(out);
        if (same) {
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        }
        const std::size_t rank = out.size();
        const std::size_t last = out[rank - 1], la = sa[rank - 1], lb = sb[rank - 1];
        std::vector<std::size_t> idx(rank, 0);
        std::size_t oa = 0, ob = 0;
        for (std::size_t i = 0; i < n; i += last) {
            for (std::size_t t = 0; t < last; ++t) f(i + t, oa + t * la, ob + t * lb);
            for (std::size_t d = rank - 1; d-- > 0;) {
                if (++idx[d] < out[d]) {
                    oa += sa[d];
                    ob += sb[d];
                    break;
                }
                oa -= sa[d] * (out[d] - 1);
                ob -= sb[d] * (out[d] - 1);
                idx[d] = 0;
            }
        }
    }
};

Broadcast plan_broadcast(const std::string& op, const Shape& a, const Shape& b) {
    Broadcast plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    plan.out.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) shape_error(op, a, b);
        plan.out[d] = std::max(pa[d], pb[d]);
    }
    plan.sa = strides_of(pa);
    plan.sb = strides_of(pb);
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] == 1) plan.sa[d] = 0;
        if (pb[d] == 1) plan.sb[d] = 0;
    }
    return plan;
}

Tape& tape_of(const Tensor& t, const char* op) {
    if (!t.valid()) throw std::invalid_argument(std::string(op) + ": invalid tensor");
    return t.tape();
}

std::vector<double> copy_value(const Tensor& t) { return {t.value().begin(), t.value().end()}; }

// Flat gather shared by permute, slice and the public gather op.
Tensor gather_impl(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape) {
    const auto& idx = *index;
    if (idx.size() != numel(out_shape)) throw ShapeError("gather: index length does not match output shape");
    const auto xv = x.value();
    std::vector<double> out(idx.size(), 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) {
            if (static_cast<std::size_t>(idx[i]) >= xv.size()) throw ShapeError("gather: index out of range");
            out[i] = xv[static_cast<std::size_t>(idx[i])];
        }
    }
    return x.tape().record(std::move(out_shape), std::move(out), {x}, [x, index](std::span<const double> g) {
        auto gx = x.grad_accumulator();
        const auto& ix = *index;
        for (std::size_t i = 0; i < ix.size(); ++i)
            if (ix[i] >= 0) gx[static_cast<std::size_t>(ix[i])] += g[i];
    });
}

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

// ---- Tensor ----

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::value() const { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

double Tensor::item() const {
    if (node_->value.size() != 1) throw ShapeError("item: tensor of shape " + to_string(node_->shape) + " is not scalar");
    return node_->value[0];
}

std::span<double> Tensor::grad_accumulator() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

// ---- Tape ----

Tape::Tape() = default;
Tape::~Tape() = default;

Tensor Tape::constant(Shape shape, std::vector<double> data) {
    if (data.size() != numel(shape)) throw ShapeError("constant: data length does not match " + to_string(shape));
    auto node = std::make_unique<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->leaf = true;
    nodes_.push_back(std::move(node));
    return {this, nodes_.back().get()};
}

Tensor Tape::constant(Shape shape, double fill) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, fill));
}

Tensor Tape::parameter(Shape shape, std::vector<double> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
}

Tensor Tape::record(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
    return record(std::move(shape), std::move(value), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor Tape::record(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs, BackwardFn backward) {
    if (value.size() != numel(shape)) throw ShapeError("record: value length does not match " + to_string(shape));
    auto node = std::make_unique<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const auto& in : inputs) {
        if (in.tape_ != this) throw std::invalid_argument("record: input belongs to a different tape");
        node->requires_grad = node->requires_grad || in.requires_grad();
    }
    if (node->requires_grad) node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.back().get()};
}

void Tape::backward(const Tensor& loss) {
    if (!loss.valid() || loss.tape_ != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.size() != 1) throw ShapeError("backward: loss of shape " + to_string(loss.shape()) + " is not scalar");
    for (auto& node : nodes_)
        if (!node->leaf) node->grad.clear();
    if (!loss.requires_grad()) return;
    loss.grad_accumulator()[0] += 1.0;
    auto it = std::find_if(nodes_.rbegin(), nodes_.rend(), [&](const auto& n) { return n.get() == loss.node_; });
    for (; it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node.grad);
    }
}

void Tape::zero_grad() {
    for (auto& node : nodes_) node->grad.clear();
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    Tape& tape = tape_of(a, "add");
    auto plan = std::make_shared<Broadcast>(plan_broadcast("add", a.shape(), b.shape()));
    const auto av = a.value(), bv = b.value();
    std::vector<double> out(numel(plan->out));
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] + bv[ib]; });
    Shape shape = plan->out;
    return tape.record(std::move(shape), std::move(out), {a, b}, [a, b, plan](std::span<const double> g) {
        if (a.requires_grad()) {
            auto ga = a.grad_accumulator();
            plan->for_each([&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
        }
        if (b.requires_grad()) {
            auto gb = b.grad_accumulator();
            plan->for_each([&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += g[i]; });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scalar_mul(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    Tape& tape = tape_of(a, "mul");
    auto plan = std::make_shared<Broadcast>(plan_broadcast("mul", a.shape(), b.shape()));
    const auto av = a.value(), bv = b.value();
    std::vector<double> out(numel(plan->out));
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] * bv[ib]; });
    Shape shape = plan->out;
    return tape.record(std::move(shape), std::move(out), {a, b}, [a, b, plan](std::span<const double> g) {
        const auto av = a.value(), bv = b.value();
        if (a.requires_grad()) {
            auto ga = a.grad_accumulator();
            plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * bv[ib]; });
        }
        if (b.requires_grad()) {
            auto gb = b.grad_accumulator();
            plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * av[ia]; });
        }
    });
}

Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out = copy_value(a);
    for (double& v : out) v *= s;
    return tape_of(a, "scalar_mul").record(a.shape(), std::move(out), {a}, [a, s](std::span<const double> g) {
        auto ga = a.grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out = copy_value(a);
    for (double& v : out) v += s;
    return tape_of(a, "add_scalar").record(a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
        auto ga = a.grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> out = copy_value(a);
    for (double& v : out) v *= v;
    return tape_of(a, "square").record(a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
        auto ga = a.grad_accumulator();
        const auto av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
    std::vector<double> out = copy_value(a);
    for (double& x : out) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    return tape_of(a, "gelu").record(a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
        auto ga = a.grad_accumulator();
        const auto av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = av[i];
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            ga[i] += d * g[i];
        }
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape& tape = tape_of(a, "matmul");
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        shape_error("matmul", a.shape(), b.shape());
    const auto n = static_cast<Eigen::Index>(a.shape()[0]);
    const auto k = static_cast<Eigen::Index>(a.shape()[1]);
    const auto m = static_cast<Eigen::Index>(b.shape()[1]);
    std::vector<double> out(static_cast<std::size_t>(n * m));
    Map(out.data(), n, m).noalias() = ConstMap(a.value().data(), n, k) * ConstMap(b.value().data(), k, m);
    return tape.record({a.shape()[0], b.shape()[1]}, std::move(out), {a, b}, [a, b, n, k, m](std::span<const double> g) {
        ConstMap gm(g.data(), n, m);
        if (a.requires_grad())
            Map(a.grad_accumulator().data(), n, k).noalias() += gm * ConstMap(b.value().data(), k, m).transpose();
        if (b.requires_grad())
            Map(b.grad_accumulator().data(), k, m).noalias() += ConstMap(a.value().data(), n, k).transpose() * gm;
    });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    Tape& tape = tape_of(a, "batched_matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) shape_error("batched_matmul", sa, sb);
    const std::size_t batch = sa[0];
    const auto n = static_cast<Eigen::Index>(sa[1]);
    const auto k = static_cast<Eigen::Index>(sa[2]);
    const auto m = static_cast<Eigen::Index>(transpose_b ? sb[1] : sb[2]);
    if (static_cast<Eigen::Index>(transpose_b ? sb[2] : sb[1]) != k) shape_error("batched_matmul", sa, sb);
    std::vector<double> out(batch * static_cast<std::size_t>(n * m));
    const auto bn = static_cast<std::size_t>(n * k), bb = static_cast<std::size_t>(k * m), bo = static_cast<std::size_t>(n * m);
    for (std::size_t i = 0; i < batch; ++i) {
        ConstMap am(a.value().data() + i * bn, n, k);
        Map om(out.data() + i * bo, n, m);
        if (transpose_b)
            om.noalias() = am * ConstMap(b.value().data() + i * bb, m, k).transpose();
        else
            om.noalias() = am * ConstMap(b.value().data() + i * bb, k, m);
    }
    return tape.record({batch, sa[1], static_cast<std::size_t>(m)}, std::move(out), {a, b},
                       [=](std::span<const double> g) {
                           for (std::size_t i = 0; i < batch; ++i) {
                               ConstMap gm(g.data() + i * bo, n, m);
                               ConstMap am(a.value().data() + i * bn, n, k);
                               if (transpose_b) {
                                   ConstMap bm(b.value().data() + i * bb, m, k);
                                   if (a.requires_grad())
                                       Map(a.grad_accumulator().data() + i * bn, n, k).noalias() += gm * bm;
                                   if (b.requires_grad())
                                       Map(b.grad_accumulator().data() + i * bb, m, k).noalias() += gm.transpose() * am;
                               } else {
                                   ConstMap bm(b.value().data() + i * bb, k, m);
                                   if (a.requires_grad())
                                       Map(a.grad_accumulator().data() + i * bn, n, k).noalias() += gm * bm.transpose();
                                   if (b.requires_grad())
                                       Map(b.grad_accumulator().data() + i * bb, k, m).noalias() += am.transpose() * gm;
                               }
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tape& tape = tape_of(x, "linear");
    if (x.shape().size() != 2 || weight.shape().size() != 2 || x.shape()[1] != weight.shape()[0])
        shape_error("linear", x.shape(), weight.shape());
    const auto n = static_cast<Eigen::Index>(x.shape()[0]);
    const auto in = static_cast<Eigen::Index>(x.shape()[1]);
    const auto out_dim = static_cast<Eigen::Index>(weight.shape()[1]);
    const bool has_bias = bias.valid();
    if (has_bias && bias.size() != static_cast<std::size_t>(out_dim)) shape_error("linear(bias)", weight.shape(), bias.shape());
    std::vector<double> out(static_cast<std::size_t>(n * out_dim));
    Map om(out.data(), n, out_dim);
    om.noalias() = ConstMap(x.value().data(), n, in) * ConstMap(weight.value().data(), in, out_dim);
    if (has_bias) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), out_dim);
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return tape.record({x.shape()[0], weight.shape()[1]}, std::move(out), inputs, [=](std::span<const double> g) {
        ConstMap gm(g.data(), n, out_dim);
        if (x.requires_grad())
            Map(x.grad_accumulator().data(), n, in).noalias() += gm * ConstMap(weight.value().data(), in, out_dim).transpose();
        if (weight.requires_grad())
            Map(weight.grad_accumulator().data(), in, out_dim).noalias() += ConstMap(x.value().data(), n, in).transpose() * gm;
        // Row-by-row so the summation order does not depend on heap alignment.
        if (has_bias && bias.requires_grad()) {
            double* gb = bias.grad_accumulator().data();
            for (Eigen::Index r = 0; r < n; ++r)
                for (Eigen::Index j = 0; j < out_dim; ++j) gb[j] += g[static_cast<std::size_t>(r * out_dim + j)];
        }
    });
}

// ---- normalization / reductions ----

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    Tape& tape = tape_of(x, "layer_norm");
    const std::size_t c = x.shape().back();
    if (gamma.size() != c || beta.size() != c) shape_error("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.size() / c;
    const auto xv = x.value(), gv = gamma.value(), bv = beta.value();
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * is;
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gv[j] + bv[j];
        }
    }
    return tape.record(x.shape(), std::move(out), {x, gamma, beta}, [=](std::span<const double> g) {
        const auto gv = gamma.value();
        if (gamma.requires_grad()) {
            auto gg = gamma.grad_accumulator();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*xhat)[r * c + j];
        }
        if (beta.requires_grad()) {
            auto gb = beta.grad_accumulator();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_accumulator();
        for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double d = g[r * c + j] * gv[j];
                mean_d += d;
                mean_dh += d * (*xhat)[r * c + j];
            }
            mean_d /= static_cast<double>(c);
            mean_dh /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
                const double d = g[r * c + j] * gv[j];
                gx[r * c + j] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * c + j] * mean_dh);
            }
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    Tape& tape = tape_of(x, "softmax");
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t n = s[axis];
    const auto xv = x.value();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    auto y = std::make_shared<std::vector<double>>(out);
    return tape.record(s, std::move(out), {x}, [=](std::span<const double> g) {
        auto gx = x.grad_accumulator();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * (*y)[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = base + j * inner;
                    gx[i] += (*y)[i] * (g[i] - dot);
                }
            }
    });
}

Tensor sum(const Tensor& x) {
    const auto xv = x.value();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    return tape_of(x, "sum").record({1}, {total}, {x}, [x](std::span<const double> g) {
        for (double& v : x.grad_accumulator()) v += g[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean: empty tensor");
    return scalar_mul(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---- shape manipulation ----

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape);
    return tape_of(x, "reshape").record(std::move(shape), copy_value(x), {x}, [x](std::span<const double> g) {
        auto gx = x.grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    std::vector<std::size_t> check(perm);
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i)
        if (check[i] != i || check.size() != s.size()) throw ShapeError("permute: invalid permutation for " + to_string(s));
    Shape out_shape(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) out_shape[d] = s[perm[d]];
    const auto in_strides = strides_of(s);
    auto index = std::make_shared<std::vector<std::int64_t>>(x.size());
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < s.size(); ++d) src += idx[d] * in_strides[perm[d]];
        (*index)[i] = static_cast<std::int64_t>(src);
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return gather_impl(x, std::move(index), std::move(out_shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape& tape = tape_of(parts.front(), "concat");
    Shape out_shape = parts.front().shape();
    if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = parts.front().shape();
        if (a.size() != b.size()) shape_error("concat", a, b);
        a[axis] = b[axis] = 0;
        if (a != b) shape_error("concat", p.shape(), parts.front().shape());
        out_shape[axis] += p.shape()[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<double> out(numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t row = p.shape()[axis] * inner;
        const auto pv = p.value();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * row), row, out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
        offset += row;
    }
    return tape.record(std::move(out_shape), std::move(out), parts, [=](std::span<const double> g) {
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            if (!parts[pi].requires_grad()) continue;
            auto gp = parts[pi].grad_accumulator();
            const std::size_t row = parts[pi].shape()[axis] * inner;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < row; ++j) gp[o * row + j] += g[o * out_row + offsets[pi] + j];
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size() || start + length > s[axis] || length == 0)
        throw ShapeError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") outside axis " +
                         std::to_string(axis) + " of " + to_string(s));
    Shape out_shape = s;
    out_shape[axis] = length;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    auto index = std::make_shared<std::vector<std::int64_t>>();
    index->reserve(outer * length * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < length; ++j)
            for (std::size_t in = 0; in < inner; ++in)
                index->push_back(static_cast<std::int64_t>((o * s[axis] + start + j) * inner + in));
    return gather_impl(x, std::move(index), std::move(out_shape));
}

Tensor cyclic_shift(const Tensor& x, const std::vector<std::ptrdiff_t>& shifts) {
    const Shape& s = x.shape();
    if (shifts.size() > s.size()) throw ShapeError("cyclic_shift: more shifts than axes in " + to_string(s));
    const auto strides = strides_of(s);
    auto index = std::make_shared<std::vector<std::int64_t>>(x.size());
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < s.size(); ++d) {
            const auto n = static_cast<std::ptrdiff_t>(s[d]);
            const std::ptrdiff_t sh = d < shifts.size() ? shifts[d] : 0;
            const std::ptrdiff_t from = ((static_cast<std::ptrdiff_t>(idx[d]) - sh) % n + n) % n;
            src += static_cast<std::size_t>(from) * strides[d];
        }
        (*index)[i] = static_cast<std::int64_t>(src);
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < s[d]) break;
            idx[d] = 0;
        }
    }
    return gather_impl(x, std::move(index), s);
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape) {
    tape_of(x, "gather");
    return gather_impl(x, std::move(index), std::move(out_shape));
}

// ---- finite-difference certification ----

GradCheckReport grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
                           std::vector<std::pair<Shape, std::vector<double>>> params,
                           const std::vector<ProbeCoordinate>& probes, double step, double tol, double abs_floor) {
    auto evaluate = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(params.size());
        for (const auto& [shape, data] : params) leaves.push_back(tape.parameter(shape, data));
        Tensor loss = loss_fn(tape, leaves);
        if (with_grad) {
            tape.backward(loss);
            for (const auto& leaf : leaves) {
                auto g = leaf.grad();
                grads->emplace_back(g.begin(), g.end());
                grads->back().resize(leaf.size(), 0.0);
            }
        }
        return loss.item();
    };

    std::vector<std::vector<double>> analytic;
    evaluate(true, &analytic);

    GradCheckReport report;
    for (const auto& probe : probes) {
        double& coord = params.at(probe.param).second.at(probe.index);
        const double saved = coord;
        coord = saved + step;
        const double up = evaluate(false, nullptr);
        coord = saved - step;
        const double down = evaluate(false, nullptr);
        coord = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[probe.param][probe.index];
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.checked += 1;
        if (!(rel <= tol)) report.failures += 1;
    }
    report.passed = report.failures == 0;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
                           std::vector<std::pair<Shape, std::vector<double>>> params, double step, double tol,
                           double abs_floor) {
    std::vector<ProbeCoordinate> probes;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].second.size(); ++i) probes.push_back({p, i});
    return grad_check(loss_fn, std::move(params), probes, step, tol, abs_floor);
}

}  // namespace neureg::ad
