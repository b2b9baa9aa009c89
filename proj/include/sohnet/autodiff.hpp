#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sohnet/tensor.hpp"

// Tape-based reverse-mode differentiation. Nodes are appended in creation
// order, so walking the tape backwards is a valid reverse topological order
// and backward() visits every reachable node exactly once.

namespace sohnet::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    bool valid() const noexcept { return tape != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const;
};

class Tape {
public:
    enum class Mode { Record, Inference };
    using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

    explicit Tape(Mode mode = Mode::Record) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return mode_ == Mode::Record; }

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf whose gradient is accumulated by backward().
    Var variable(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    /// Gradient of the last backward() target; zeros when the node was unreached.
    Tensor grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

    /// When enabled every op output is scanned and a non-finite value throws
    /// ErrorKind::Numeric at the op that produced it.
    void set_finite_check(bool on) noexcept { finite_check_ = on; }

    // Op-authoring interface.
    Var push(Tensor value, std::vector<Var> parents, BackwardFn backward);
    const Tensor& node_grad(std::uint32_t id) const { return nodes_[id].grad; }
    /// Gradient buffer of a parent, allocated as zeros on first use. Returns
    /// nullptr when the parent does not require a gradient.
    Tensor* grad_sink(Var parent);
    const std::vector<Var>& parents(std::uint32_t id) const { return nodes_[id].parents; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<Var> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Mode mode_;
    bool finite_check_ = false;
    std::deque<Node> nodes_;  // stable addresses: value() references survive appends
};

struct ConvOptions {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
};

// Primitive ops. Shapes follow the conventions noted on each; a mismatch
// throws ErrorKind::Shape. Operations accepting a leading batch axis treat
// each batch entry independently.

/// x: C_in×H×W or N×C_in×H×W; w: C_out×C_in×kh×kw; bias: C_out or none.
Var conv2d(Var x, Var w, std::optional<Var> bias, const ConvOptions& opt);
/// x: n or N×n; w: m×n; bias: m or none.
Var linear(Var x, Var w, std::optional<Var> bias);
Var relu(Var x);
Var tanh(Var x);
/// Mean over the last axis, which is kept with extent 1.
Var avg_pool_last(Var x);
/// Elementwise mean of equally-shaped vectors, summed in the given order.
Var mean_over_set(std::span<const Var> inputs);
/// x: N×d. Row g of the result is the mean of rows groups[g], summed in the
/// listed order.
Var group_mean(Var x, const std::vector<std::vector<std::size_t>>& groups);
/// Concatenation along the last axis; leading axes must agree.
Var concat(Var a, Var b);
/// (1/n)·Σ(pred − target)² as a one-element tensor.
Var mse(Var pred, Var target);
/// Row `index` of an N_T×d table.
Var embedding_lookup(Var table, std::size_t index);
/// Rows `indices` of a table, stacked into |indices|×d.
Var embedding_rows(Var table, std::span<const std::size_t> indices);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
/// Σ coeffs[i]·terms[i], accumulated left to right; all terms share a shape.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);
Var reshape(Var x, Shape shape);
/// Column j of an N×m matrix, as an N-vector.
Var select_col(Var x, std::size_t j);
Var sum(Var x);
Var sum_squares(Var x);

/// Central-difference check of the tape gradient of a scalar function.
/// Returns max_i |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|).
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace sohnet::ad
