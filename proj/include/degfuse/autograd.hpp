// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "degfuse/tensor.hpp"

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op records its parents and a backward closure on a fresh Node. Nodes
// that do not depend on any trainable leaf carry no closure, so constant
// subgraphs (targets, prompt embeddings) cost nothing on the way back.
namespace degfuse::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    /// Gradient storage, zero-allocated on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Accumulated gradient; zeros when nothing has flowed in yet.
    Tensor grad() const;
    void zero_grad();

    bool valid() const { return node_ != nullptr; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value);

/// Build an op result. `fn` runs during backward with the result node; it
/// reads `self.grad` and accumulates into parents that require grad.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

/// Accumulate d(root)/d(leaf) into every reachable trainable leaf. The
/// root's gradient is seeded with `seed` in every element.
void backward(const Var& root, double seed = 1.0);

inline constexpr double kLeakySlope = 0.2;

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a * s where s is a single-element Var.
Var scale_by(const Var& a, const Var& s);
Var leaky_relu(const Var& a, double slope = kLeakySlope);
Var sigmoid(const Var& a);
/// |a| with sign(0) := 0.
Var abs(const Var& a);
/// Elementwise max; exact ties route the gradient to `a`.
Var maximum(const Var& a, const Var& b);

// Reductions
Var sum(const Var& a);
Var mean(const Var& a);

// Shape
Var reshape(const Var& a, Shape shape);
/// Concatenate along the leading axis.
Var concat(const std::vector<Var>& parts);
/// Rows [begin, begin+count) along the leading axis.
Var slice(const Var& a, std::size_t begin, std::size_t count);

// Linear algebra on rank-2 tensors
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

/// y = W x + b with x (D), W (O, D), b (O).
Var linear(const Var& x, const Var& w, const std::optional<Var>& b);

// Feature maps (C, H, W)

/// Zero-padded 2-D cross-correlation, padding k/2. w is (O, C/groups, k, k).
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b, int stride = 1,
           int groups = 1);
/// x * g[c] broadcast over H, W.
Var channel_scale(const Var& x, const Var& g);
/// x + b[c] broadcast over H, W.
Var channel_shift(const Var& x, const Var& b);
/// x[c] * m for a (1, H, W) mask m.
Var spatial_scale(const Var& x, const Var& m);
/// Mean over H, W: (C, H, W) -> (C).
Var global_avg_pool(const Var& x);
/// (C, H, W) -> (2, H, W): channel mean map then channel max map
/// (first index wins ties).
Var channel_mean_max(const Var& x);
Var upsample_nearest2(const Var& x);
Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta,
               double eps = 1e-5);
/// Normalizes across channels independently at every pixel.
Var channel_layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

}  // namespace degfuse::ag
