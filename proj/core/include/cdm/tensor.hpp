#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace cdm {

class Tape;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized to data iff requires_grad
    bool requires_grad = false;
    const Tape* origin = nullptr;  // tape that recorded this node, null for leaves
};
}  // namespace detail

// Dense row-major array of 64-bit floats. A Tensor is a cheap shared handle;
// values are treated as immutable once created, except for trainable leaves
// whose storage an optimizer updates between tapes via mutable_values().
//
// Differentiable results are recorded on the active Tape (see Tape below);
// with no tape in scope, operations are plain arithmetic.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    const std::vector<double>& values() const;
    // Unchecked write access for optimizers, loaders, and test perturbation.
    std::vector<double>& mutable_values();

    double item() const;  // RankError unless numel() == 1
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    const std::vector<double>& grad() const;  // Error if !requires_grad
    void zero_grad();

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
    friend Tensor make_result(Shape shape, std::vector<double> data,
                              std::initializer_list<Tensor> inputs);
};

// Ordered record of the differentiable operations executed while the tape was
// active. backward() replays the records in exact reverse execution order,
// accumulating into the grad buffer of every requires_grad participant.
// A tape can be consumed by exactly one backward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // loss must be scalar (RankError) and produced on this tape (TapeError).
    // Constant scalar losses (nothing recorded) are allowed and leave all
    // gradients untouched.
    void backward(const Tensor& loss);

    bool consumed() const { return consumed_; }
    std::size_t size() const { return records_.size(); }

    void record(std::function<void()> backward_step);

private:
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

// RAII guard making a tape the active recording target for this thread.
// Scopes nest; the innermost tape records.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// Differentiates loss on the currently active tape.
void backward(const Tensor& loss);

// ---- differentiable operations -------------------------------------------
// Elementwise binaries accept equal shapes or a one-element tensor broadcast
// against the other operand (scalar-with-tensor only; no general broadcasting).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor sub(const Tensor& a, double c);
Tensor sub(double c, const Tensor& a);
Tensor mul(const Tensor& a, double c);
Tensor div(const Tensor& a, double c);

// matmul: rank-2 only, [n,k] x [k,m] -> [n,m].
Tensor matmul(const Tensor& a, const Tensor& b);

// affine: x [n,k] * w [k,m] + b [m] broadcast over rows -> [n,m].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor silu(const Tensor& x);  // x * sigmoid(x)
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Row-wise log-softmax over the last axis of a rank-2 tensor.
Tensor log_softmax(const Tensor& x);

// Embedding-style lookup: picks rows of a rank-2 table, gradient scatters back.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);

// Tiles a vector (or single row) into `count` identical rows; the gradient
// sums over rows. This is the only row-broadcast the library provides.
Tensor repeat_rows(const Tensor& row, std::size_t count);

Tensor reshape(const Tensor& x, Shape shape);

// Copy that is cut off from the tape (no gradient flows through it).
Tensor detach(const Tensor& x);

}  // namespace cdm
