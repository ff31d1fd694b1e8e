#pragma once

#include <cstdint>
#include <vector>

#include "mtecg/tensor.hpp"

namespace mtecg {

using NodeId = std::int32_t;

// Define-by-run reverse-mode tape over 2-D tensors. Node values are computed
// eagerly as ops are recorded; backward() walks the tape once in reverse
// creation order (which is a topological order by construction) and may be
// called only once per graph.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    NodeId leaf(Tensor value);
    // Leaf referencing caller-owned storage; the tensor must outlive the graph.
    NodeId leaf_ref(const Tensor* value);

    NodeId matmul(NodeId a, NodeId b);      // (m,k) x (k,n) -> (m,n)
    NodeId matmul_nt(NodeId a, NodeId b);   // (m,k) x (n,k)^T -> (m,n)
    NodeId add(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId bias); // bias broadcast over rows
    NodeId scale(NodeId a, double c);
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps);
    NodeId gelu(NodeId x);                  // exact erf form
    NodeId softmax_rows(NodeId x);
    NodeId slice_rows(NodeId x, int start, int len);
    NodeId slice_cols(NodeId x, int start, int len);
    NodeId concat_rows(const std::vector<NodeId>& xs);
    NodeId concat_cols(const std::vector<NodeId>& xs);
    NodeId gather_rows(NodeId x, std::vector<int> indices);
    NodeId repeat_row(NodeId x, int n);
    NodeId mean_rows(NodeId x);
    NodeId sub_const(NodeId x, Tensor c);
    NodeId sum_squares(NodeId x);           // -> 1x1
    // Mean over entries of max(z,0) - z*y + log(1 + exp(-|z|)).
    NodeId bce_with_logits_mean(NodeId logits, Tensor labels);

    const Tensor& value(NodeId id) const { return val(node(id)); }
    // Valid after backward(); zero tensor for nodes the root does not reach.
    const Tensor& grad(NodeId id) const;

    void backward(NodeId root, const Tensor& upstream);
    bool backward_done() const { return consumed_; }

    // Recomputes every node value from the leaves, in place. Used to check
    // that a recorded trace replays bit-exactly.
    void replay();

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        leaf, matmul, matmul_nt, add, add_rowvec, scale, layer_norm, gelu,
        softmax_rows, slice_rows, slice_cols, concat_rows, concat_cols,
        gather_rows, repeat_row, mean_rows, sub_const, sum_squares, bce,
    };

    struct Node {
        Op op = Op::leaf;
        Tensor value;
        const Tensor* ext = nullptr;
        Tensor grad;
        std::vector<NodeId> in;
        std::vector<int> iparams;
        double dparam = 0.0;
        Tensor aux;
    };

    static const Tensor& val(const Node& n) { return n.ext ? *n.ext : n.value; }
    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId push(Node n);
    void eval(Node& n);
    void backprop(Node& n);
    Tensor& grad_buf(NodeId id);

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

} // namespace mtecg
