#include "cdm/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cdm/errors.hpp"

namespace cdm {

namespace {

thread_local Tape* t_active_tape = nullptr;

using NodePtr = std::shared_ptr<detail::TensorNode>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("from_values: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->data.size(), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw Error("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::numel() const {
    if (!node_) throw Error("use of undefined tensor");
    return node_->data.size();
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw Error("use of undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_values() {
    if (!node_) throw Error("use of undefined tensor");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw RankError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i) const {
    if (i >= numel()) throw DomainError("at: index out of range");
    return node_->data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw RankError("at(i,j): tensor is not rank 2");
    if (i >= shape()[0] || j >= shape()[1]) throw DomainError("at: index out of range");
    return node_->data[i * shape()[1] + j];
}

bool Tensor::requires_grad() const {
    return node_ && node_->requires_grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!requires_grad()) {
        throw Error("grad: tensor does not require gradients");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

// ---- Tape -------------------------------------------------------------------

void Tape::record(std::function<void()> backward_step) {
    if (consumed_) {
        throw TapeError("record: tape was already consumed by a backward pass");
    }
    records_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw TapeError("backward: tape was already consumed");
    }
    if (!loss.defined() || loss.numel() != 1) {
        throw RankError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    consumed_ = true;
    auto node = loss.node();
    if (node->requires_grad) {
        if (node->origin != this) {
            throw TapeError("backward: loss was not produced on this tape");
        }
        node->grad[0] = 1.0;
    }
    // Constant losses recorded nothing that reaches them; replay is still safe.
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        (*it)();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) {
    t_active_tape = &tape;
}

TapeScope::~TapeScope() {
    t_active_tape = previous_;
}

Tape* active_tape() {
    return t_active_tape;
}

void backward(const Tensor& loss) {
    if (!t_active_tape) {
        throw TapeError("backward: no active tape in scope");
    }
    t_active_tape->backward(loss);
}

// ---- op plumbing ------------------------------------------------------------

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    Tape* tape = t_active_tape;
    if (tape) {
        bool any_grad = false;
        for (const Tensor& in : inputs) {
            if (in.requires_grad()) {
                any_grad = true;
                break;
            }
        }
        if (any_grad) {
            node->requires_grad = true;
            node->grad.assign(node->data.size(), 0.0);
            node->origin = tape;
        }
    }
    return Tensor(std::move(node));
}

namespace {

// Records `step` when the result participates in the active tape.
void maybe_record(const Tensor& result, std::function<void()> step) {
    if (result.requires_grad()) {
        t_active_tape->record(std::move(step));
    }
}

enum class Broadcast { none, a_scalar, b_scalar };

Broadcast binary_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (a.numel() == 1) return Broadcast::a_scalar;
    if (b.numel() == 1) return Broadcast::b_scalar;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) + " (only scalar-with-tensor broadcast is supported)");
}

// Shared skeleton for elementwise binaries. fwd(x, y) computes the value,
// dfdx/dfdy give partial derivatives at (x, y).
template <typename F, typename Dx, typename Dy>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F fwd, Dx dfdx, Dy dfdy) {
    const Broadcast mode = binary_mode(op, a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    const std::size_t n = std::max(av.size(), bv.size());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = mode == Broadcast::a_scalar ? av[0] : av[i];
        const double y = mode == Broadcast::b_scalar ? bv[0] : bv[i];
        out[i] = fwd(x, y);
    }
    Shape out_shape = mode == Broadcast::a_scalar ? b.shape() : a.shape();
    Tensor result = make_result(std::move(out_shape), std::move(out), {a, b});
    maybe_record(result, [an = a.node(), bn = b.node(), rn = result.node(), mode, dfdx, dfdy] {
        const std::size_t n = rn->data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = rn->grad[i];
            if (g == 0.0) continue;
            const double x = mode == Broadcast::a_scalar ? an->data[0] : an->data[i];
            const double y = mode == Broadcast::b_scalar ? bn->data[0] : bn->data[i];
            if (an->requires_grad) {
                an->grad[mode == Broadcast::a_scalar ? 0 : i] += g * dfdx(x, y);
            }
            if (bn->requires_grad) {
                bn->grad[mode == Broadcast::b_scalar ? 0 : i] += g * dfdy(x, y);
            }
        }
    });
    return result;
}

// Elementwise unary skeleton: dfdx receives (x, f(x)).
template <typename F, typename D>
Tensor unary_op(const Tensor& x, F fwd, D dfdx) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Tensor result = make_result(x.shape(), std::move(out), {x});
    maybe_record(result, [xn = x.node(), rn = result.node(), dfdx] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < rn->data.size(); ++i) {
            xn->grad[i] += rn->grad[i] * dfdx(xn->data[i], rn->data[i]);
        }
    });
    return result;
}

}  // namespace

// ---- arithmetic ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, double c) {
    return add(a, -c);
}

Tensor sub(double c, const Tensor& a) {
    return unary_op(a, [c](double x) { return c - x; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor div(const Tensor& a, double c) {
    return mul(a, 1.0 / c);
}

// ---- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t n = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], m = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(n * m);
    as_matrix(out, n, m) = as_matrix(a.values(), n, k) * as_matrix(b.values(), k, m);
    Tensor result = make_result({n, m}, std::move(out), {a, b});
    maybe_record(result, [an = a.node(), bn = b.node(), rn = result.node(), n, k, m] {
        const auto g = as_matrix(rn->grad, n, m);
        if (an->requires_grad) {
            as_matrix(an->grad, n, k) += g * as_matrix(bn->data, k, m).transpose();
        }
        if (bn->requires_grad) {
            as_matrix(bn->grad, k, m) += as_matrix(an->data, n, k).transpose() * g;
        }
    });
    return result;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        throw ShapeError("affine: expects x [n,k], w [k,m], b [m]; got " + shape_str(x.shape()) +
                         ", " + shape_str(w.shape()) + ", " + shape_str(b.shape()));
    }
    const std::size_t n = x.shape()[0], k = x.shape()[1];
    const std::size_t m = w.shape()[1];
    if (w.shape()[0] != k || b.shape()[0] != m) {
        throw ShapeError("affine: shape mismatch " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()) + " + " + shape_str(b.shape()));
    }
    std::vector<double> out(n * m);
    {
        auto o = as_matrix(out, n, m);
        o = as_matrix(x.values(), n, k) * as_matrix(w.values(), k, m);
        o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(),
                                                            static_cast<Eigen::Index>(m));
    }
    Tensor result = make_result({n, m}, std::move(out), {x, w, b});
    maybe_record(result, [xn = x.node(), wn = w.node(), bn = b.node(), rn = result.node(), n, k, m] {
        const auto g = as_matrix(rn->grad, n, m);
        if (xn->requires_grad) {
            as_matrix(xn->grad, n, k) += g * as_matrix(wn->data, k, m).transpose();
        }
        if (wn->requires_grad) {
            as_matrix(wn->grad, k, m) += as_matrix(xn->data, n, k).transpose() * g;
        }
        if (bn->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), static_cast<Eigen::Index>(m)) +=
                g.colwise().sum();
        }
    });
    return result;
}

// ---- nonlinearities -------------------------------------------------------------

Tensor silu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * sigmoid(v); },
        [](double v, double) {
            const double s = sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor tanh(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); },
                    [](double, double fx) { return 1.0 - fx * fx; });
}

Tensor exp(const Tensor& x) {
    return unary_op(x, [](double v) { return std::exp(v); },
                    [](double, double fx) { return fx; });
}

Tensor log(const Tensor& x) {
    return unary_op(x, [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
    return unary_op(x, [](double v) { return v * v; },
                    [](double v, double) { return 2.0 * v; });
}

// ---- reductions -------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    const auto& xv = x.values();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    Tensor result = make_result({}, {total}, {x});
    maybe_record(result, [xn = x.node(), rn = result.node()] {
        if (!xn->requires_grad) return;
        const double g = rn->grad[0];
        for (auto& gi : xn->grad) gi += g;
    });
    return result;
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    return div(sum(x), static_cast<double>(x.numel()));
}

// ---- structure --------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(first));
    }
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.size()) {
            throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " +
                             shape_str(p.shape()));
        }
        for (std::size_t d = 0; d < first.size(); ++d) {
            if (d != axis && p.shape()[d] != first[d]) {
                throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " +
                                 shape_str(p.shape()));
            }
        }
        axis_total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    std::vector<double> out(shape_numel(out_shape));
    const std::size_t out_stride = axis_total * inner;
    std::size_t axis_offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t p_axis = p.shape()[axis];
        const auto& pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(pv.begin() + o * p_axis * inner, pv.begin() + (o + 1) * p_axis * inner,
                      out.begin() + o * out_stride + axis_offset * inner);
        }
        axis_offset += p_axis;
    }

    std::vector<Tensor> holder = parts;  // keep nodes alive in closure
    Tensor result = make_result(std::move(out_shape), std::move(out), {});
    if (t_active_tape && std::any_of(parts.begin(), parts.end(),
                                     [](const Tensor& t) { return t.requires_grad(); })) {
        auto node = result.node();
        node->requires_grad = true;
        node->grad.assign(node->data.size(), 0.0);
        node->origin = t_active_tape;
    }
    if (result.requires_grad()) {
        t_active_tape->record([holder, rn = result.node(), outer, inner, out_stride, axis] {
            std::size_t axis_offset = 0;
            for (const Tensor& p : holder) {
                const std::size_t p_axis = p.shape()[axis];
                auto pn = p.node();
                if (pn->requires_grad) {
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* g = &rn->grad[o * out_stride + axis_offset * inner];
                        double* dst = &pn->grad[o * p_axis * inner];
                        for (std::size_t i = 0; i < p_axis * inner; ++i) dst[i] += g[i];
                    }
                }
                axis_offset += p_axis;
            }
        });
    }
    return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
    }
    if (start + length > shape[axis] || length == 0) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") invalid for shape " +
                         shape_str(shape) + " axis " + std::to_string(axis));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

    Shape out_shape = shape;
    out_shape[axis] = length;
    const auto& xv = x.values();
    std::vector<double> out(outer * length * inner);
    const std::size_t in_stride = shape[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(xv.begin() + o * in_stride + start * inner,
                  xv.begin() + o * in_stride + (start + length) * inner,
                  out.begin() + o * length * inner);
    }
    Tensor result = make_result(std::move(out_shape), std::move(out), {x});
    maybe_record(result, [xn = x.node(), rn = result.node(), outer, inner, in_stride, start, length] {
        if (!xn->requires_grad) return;
        for (std::size_t o = 0; o < outer; ++o) {
            const double* g = &rn->grad[o * length * inner];
            double* dst = &xn->grad[o * in_stride + start * inner];
            for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
        }
    });
    return result;
}

Tensor log_softmax(const Tensor& x) {
    if (x.rank() != 2) {
        throw ShapeError("log_softmax: expects rank-2 input, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.shape()[0], c = x.shape()[1];
    const auto& xv = x.values();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &xv[i * c];
        const double mx = *std::max_element(row, row + c);
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    Tensor result = make_result({n, c}, std::move(out), {x});
    maybe_record(result, [xn = x.node(), rn = result.node(), n, c] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += rn->grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
                const double softmax = std::exp(rn->data[i * c + j]);
                xn->grad[i * c + j] += rn->grad[i * c + j] - softmax * gsum;
            }
        }
    });
    return result;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
    if (table.rank() != 2) {
        throw ShapeError("gather_rows: expects rank-2 table, got " + shape_str(table.shape()));
    }
    const std::size_t rows = table.shape()[0], width = table.shape()[1];
    for (std::size_t idx : indices) {
        if (idx >= rows) {
            throw DomainError("gather_rows: index " + std::to_string(idx) +
                              " out of range for table " + shape_str(table.shape()));
        }
    }
    const auto& tv = table.values();
    std::vector<double> out(indices.size() * width);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy(tv.begin() + indices[i] * width, tv.begin() + (indices[i] + 1) * width,
                  out.begin() + i * width);
    }
    Tensor result = make_result({indices.size(), width}, std::move(out), {table});
    maybe_record(result, [tn = table.node(), rn = result.node(), indices, width] {
        if (!tn->requires_grad) return;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* g = &rn->grad[i * width];
            double* dst = &tn->grad[indices[i] * width];
            for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
        }
    });
    return result;
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
    const Tensor flat = row;
    const Shape& shape = flat.shape();
    std::size_t width;
    if (shape.size() == 1) {
        width = shape[0];
    } else if (shape.size() == 2 && shape[0] == 1) {
        width = shape[1];
    } else {
        throw ShapeError("repeat_rows: expects a vector or single row, got " + shape_str(shape));
    }
    if (count == 0) throw ShapeError("repeat_rows: count must be >= 1");
    const auto& rv = flat.values();
    std::vector<double> out(count * width);
    for (std::size_t i = 0; i < count; ++i) {
        std::copy(rv.begin(), rv.end(), out.begin() + i * width);
    }
    Tensor result = make_result({count, width}, std::move(out), {row});
    maybe_record(result, [xn = row.node(), rn = result.node(), count, width] {
        if (!xn->requires_grad) return;
        for (std::size_t j = 0; j < width; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < count; ++i) acc += rn->grad[i * width + j];
            xn->grad[j] += acc;
        }
    });
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor result = make_result(std::move(shape), x.values(), {x});
    maybe_record(result, [xn = x.node(), rn = result.node()] {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[i] += rn->grad[i];
    });
    return result;
}

Tensor detach(const Tensor& x) {
    return Tensor::from_values(x.shape(), x.values(), false);
}

}  // namespace cdm
