#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mga {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tape;

// Dense row-major tensor of 64-bit floats. Copies share storage; storage is
// detached before mutation, so tensors that are not being written to are
// immutable values safe to share across threads. A tensor created by an
// operation whose inputs are recorded carries the id of its tape node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;

    const std::vector<double>& values() const;
    std::vector<double>& mutable_values();

    double at(std::size_t flat_index) const { return values()[flat_index]; }
    double at2(std::size_t row, std::size_t col) const;
    double item() const; // requires size() == 1

    bool requires_grad() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    static const std::vector<double>& empty_values();

    Shape shape_;
    std::shared_ptr<std::vector<double>> values_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Records operations on watched tensors and replays them in reverse to
// accumulate gradients. A tape is single-threaded; distinct tapes may run
// concurrently. Creation order is topological order, so one reverse sweep
// visits each node exactly once.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a value as a trainable leaf. The returned tensor shares the
    // input's storage and carries a fresh node id.
    Tensor watch(const Tensor& value);

    // Reverse sweep from a scalar loss. Returns node id -> gradient for every
    // node the loss depends on (leaves included).
    std::unordered_map<int, Tensor> backward(const Tensor& loss);

    std::size_t num_nodes() const { return nodes_.size(); }

    // Used by operation implementations.
    using PullFn = std::function<void(const std::vector<double>& out_grad, Tape& tape)>;
    Tensor record(Shape shape, std::shared_ptr<std::vector<double>> values, PullFn pull);
    void accumulate(int node, const double* grad, std::size_t count);
    void accumulate_scaled(int node, const double* grad, std::size_t count, double scale);
    std::vector<double>& grad_buffer(int node);

private:
    struct Node {
        Shape shape;
        PullFn pull;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<char> touched_;
};

// Operation kinds accepted by the `forward` dispatcher.
enum class Op {
    Matmul,
    Add,
    Subtract,
    Multiply,
    ScalarMultiply,
    Exp,
    Log,
    Tanh,
    Sum,
    Mean,
    Softmax,
    L2Normalize,
    Transpose,
    Concat,
    MaskFill,
    SliceRows,
    Reshape,
};

struct OpAttrs {
    std::optional<std::size_t> axis; // Softmax, L2Normalize, Concat, optional for Sum/Mean
    double scalar = 0.0;             // ScalarMultiply factor, MaskFill fill value
    std::size_t begin = 0;           // SliceRows
    std::size_t count = 0;           // SliceRows
    Shape shape;                     // Reshape
};

const std::vector<Op>& all_op_kinds();
std::string op_name(Op kind);

Tensor forward(Op kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});

// Named operations (the dispatcher routes to these).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scalar_multiply(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor l2_normalize(const Tensor& a, std::size_t axis);
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor mask_fill(const Tensor& a, const Tensor& mask, double fill);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& a, Shape shape);

// Central-difference check of the analytic gradient. `f` receives tensors
// already watched on the provided tape and must return a scalar loss on it.
// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
using GraphFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;
double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double eps);

} // namespace mga
