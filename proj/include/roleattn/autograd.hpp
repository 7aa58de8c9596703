#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roleattn/tensor.hpp"

namespace roleattn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

// Named, ordered parameter storage. Addresses of stored parameters are
// stable for the lifetime of the set, so a Tape may hold pointers to them.
class ParameterSet {
public:
    Parameter& add(std::string name, Tensor value);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    void zero_grad();
    std::size_t count() const { return params_.size(); }
    std::size_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::deque<Parameter> params_;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

// Reverse-mode tape for a single forward pass. Nodes are appended in
// evaluation order, so reverse iteration is a valid topological order.
class Tape {
public:
    using BackwardFn =
        std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Parameter& p);

    // Appends a node. `allow_neg_inf` marks nodes whose value may carry
    // deliberate -inf entries (masked scores); the non-finite scan skips
    // those entries.
    Var record(Tensor value, BackwardFn backward, const char* op, bool allow_neg_inf = false);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    // Gradient of the last backward() target with respect to node v. Nodes
    // the loss does not depend on report an all-zero tensor.
    Tensor grad(Var v) const;
    // Lazily zero-initialized gradient accumulator, for use by BackwardFns.
    Tensor& grad_ref(std::size_t id);

    // Propagates d(loss)/d(node) for every node and adds parameter
    // gradients into Parameter::grad. Rejects non-scalar losses.
    void backward(Var loss);

    // Describes the first node holding a NaN/inf value, if any.
    std::optional<std::string> first_non_finite() const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        Parameter* param = nullptr;
        const char* op = "";
        bool allow_neg_inf = false;
    };
    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// Differentiable operations. Operands must live on the same tape.
namespace ops {

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var add_row_bias(Var x, Var bias);
// x + c for a constant c; -inf entries in c are allowed and pass no gradient.
Var add_constant(Var x, const Tensor& c);
Var mul_constant(Var x, const Tensor& c);
Var scale(Var x, double s);
Var relu(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var columns(Var x, std::size_t first, std::size_t count);
Var concat_columns(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const std::size_t> ids);
// Mean over the first `count` rows, producing 1 x cols.
Var mean_rows(Var x, std::size_t count);
Var sum(Var x);
// Mean softmax cross-entropy over rows of logits.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace ops

}  // namespace roleattn
