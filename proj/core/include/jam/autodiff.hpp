#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "jam/tensor.hpp"

namespace jam::ad {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    const Tensor& value() const;
    const Tensor::Shape& shape() const { return value().shape(); }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Append-only tape of tensor operations.
//
// Nodes are stored in creation order, which is a topological order, so
// backward() is a single reverse sweep. With recording disabled the graph
// keeps values only and behaves as a plain evaluator.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t node)>;

    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Reverse-mode sweep from a scalar node. Gradients from a previous call
    // are discarded first.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    // Gradient of the last backward() target with respect to node `id`;
    // zeros when no path exists.
    Tensor grad(std::size_t id) const;
    Tensor grad(Var v) const { return grad(v.id()); }

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    // Op authoring interface.
    Var emit(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op);
    Var emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op) {
        return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward), op);
    }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    // Accumulation buffer for node `id`, zero-initialised on first use.
    Tensor& grad_buffer(std::size_t id);
    // Gradient flowing into node `id` during its backward call.
    const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
    };

    std::vector<Node> nodes_;
    bool record_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

using TokenIds = std::span<const std::int32_t>;

// Token id marking a position excluded from cross_entropy.
inline constexpr std::int32_t kIgnoreTarget = -1;

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);
// tanh-approximated GELU.
Var gelu(Var a);
// Non-affine normalisation over the last axis.
Var layer_norm(Var x, double eps = 1e-5);
// axis is 0 or 1 for matrices, 0 for vectors; max-subtracted.
Var softmax(Var x, int axis = -1);
// Multi-head scaled dot-product attention over row-major (T x D) inputs,
// heads taken from contiguous column blocks of width D / n_heads.
Var attention(Var q, Var k, Var v, std::size_t n_heads, bool causal);
// Rows of `table` selected by ids (embedding lookup).
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
// Mean negative log-likelihood over rows whose target is not kIgnoreTarget.
Var cross_entropy(Var logits, TokenIds targets);

}  // namespace jam::ad
