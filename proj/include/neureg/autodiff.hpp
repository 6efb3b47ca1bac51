#pragma once

// Reverse-mode differentiation over dense row-major (last axis fastest) tensors.
//
// A Tape owns every node recorded during one forward pass. Tensor is a light
// handle into the tape and is only valid while the tape lives. Ops append a node
// with its forward value and a backward closure; Tape::backward replays the
// closures in reverse insertion order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace neureg::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class Tape;
struct Node;

class Tensor {
public:
    Tensor() = default;

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::span<const double> value() const;
    /// Empty unless the tensor takes part in differentiation and backward has reached it.
    std::span<const double> grad() const;
    double item() const;
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }

    /// Gradient accumulator for use inside backward closures of custom ops.
    /// Allocates zeros on first use. Only call when requires_grad() is true.
    std::span<double> grad_accumulator() const;

private:
    friend class Tape;
    Tensor(Tape* tape, Node* node) : tape_(tape), node_(node) {}

    Tape* tape_ = nullptr;
    Node* node_ = nullptr;
};

/// Receives the gradient of the loss w.r.t. the op output and accumulates into inputs.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor constant(Shape shape, std::vector<double> data);
    Tensor constant(Shape shape, double fill);
    /// Differentiable leaf.
    Tensor parameter(Shape shape, std::vector<double> data);

    /// Appends a node. `backward` is dropped when no input requires grad.
    Tensor record(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs, BackwardFn backward);
    Tensor record(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Leaf gradients accumulate across
    /// calls until zero_grad(); intermediate gradients are recomputed each call.
    void backward(const Tensor& loss);
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// ---- elementwise (numpy-style broadcasting for binary ops) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);

// ---- linear algebra ----
/// [n, k] x [k, m] -> [n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B, n, k] x [B, k, m] -> [B, n, m], or with transpose_b: [B, n, k] x [B, m, k] -> [B, n, m]
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x [N, in] W [in, out] + b [out]; bias may be an invalid Tensor for no bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- normalization / reductions ----
/// Normalizes over the last axis, then scales by gamma and shifts by beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- shape manipulation ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// torch.roll semantics: out[(i + shift) mod n] = x[i] along each axis.
Tensor cyclic_shift(const Tensor& x, const std::vector<std::ptrdiff_t>& shifts);
/// out[i] = index[i] < 0 ? 0 : x.flat[index[i]]. Backward scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape);

// ---- finite-difference certification ----
struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t failures = 0;
    bool passed = true;
};

struct ProbeCoordinate {
    std::size_t param = 0;
    std::size_t index = 0;
};

/// `loss_fn` builds the scalar loss on a fresh tape from the given parameter
/// leaves. The analytic gradient is compared against central differences at the
/// probed coordinates. Relative error is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
    std::vector<std::pair<Shape, std::vector<double>>> params, const std::vector<ProbeCoordinate>& probes,
    double step, double tol, double abs_floor = 1e-8);

/// Probes every coordinate of every parameter.
GradCheckReport grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& loss_fn,
    std::vector<std::pair<Shape, std::vector<double>>> params, double step, double tol, double abs_floor = 1e-8);

}  // namespace neureg::ad
