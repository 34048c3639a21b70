// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "timl/errors.hpp"

namespace timl {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind : std::uint8_t {
    leaf,
    matmul,
    add,
    sub,
    mul,
    unary,        // elementwise f^(order) of one of UnaryKind
    concat,
    slice,
    pad_slice,    // inverse of slice: embed into zeros
    mean_all,
    sum_all,
    transpose,
    reshape,
    bcast_rows,   // [c] -> [n,c]
    sum_rows,     // [n,c] -> [c]
    bcast_scalar, // scalar -> any shape
    expand_groups,// [n,g] -> [n,g*s], each group value repeated s times
    sum_groups,   // [n,c] -> [n,g], sum within each group
    scale_const,
    add_const,
};

enum class UnaryKind : std::uint8_t { sigmoid, tanh, gelu, softplus, rsqrt };

const char* op_name(OpKind op);

class Tensor;

/// One recorded computation node. Value data is immutable after construction;
/// the parent list plus the per-op attributes are enough to replay the
/// forward computation bit-exactly.
struct Node {
    OpKind op = OpKind::leaf;
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<Tensor> parents;

    // op attributes (meaning depends on op)
    UnaryKind ukind = UnaryKind::sigmoid;
    int order = 0;                 // unary: derivative order
    std::int64_t axis = 0;         // concat/slice/pad_slice
    std::int64_t start = 0;        // slice/pad_slice
    std::int64_t extent = 0;       // pad_slice: output extent along axis; bcast_rows: n; expand_groups: group size; sum_groups: group count
    double cval = 0.0;             // scale_const/add_const
};

/// Value handle over a shared computation node. Copies are cheap and share
/// the underlying buffer; data is never mutated in place, so snapshots can be
/// read concurrently.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->op == OpKind::leaf; }

    const std::vector<double>& values() const { return node_->data; }
    double operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
    /// Value of a scalar (numel == 1) tensor.
    double item() const;

    const Node& node() const { return *node_; }
    const Node* node_ptr() const { return node_.get(); }

    /// Same data, detached from the graph (becomes a leaf; keeps requires_grad=false).
    Tensor detach() const;

private:
    std::shared_ptr<const Node> node_;
};

// -- construction ------------------------------------------------------------

Tensor tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
Tensor scalar(double v);
Tensor zeros(Shape shape);
Tensor ones(Shape shape);
Tensor full(Shape shape, double v);
/// New leaf equal to `t` except element `idx` set to `v` (finite-difference probes).
Tensor with_element(const Tensor& t, std::int64_t idx, double v);

// -- primitives ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Elementwise f^(order) for the given kind; order 0 is the function itself.
/// Orders up to 3 are defined, which covers double backpropagation.
Tensor unary(const Tensor& x, UnaryKind kind, int order = 0);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Exact GeLU: x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor rsqrt(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::int64_t axis);
Tensor concat(const Tensor& a, const Tensor& b, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t len);

Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

Tensor transpose(const Tensor& m);
Tensor reshape(const Tensor& x, Shape shape);

Tensor broadcast_rows(const Tensor& v, std::int64_t n);
Tensor sum_rows(const Tensor& m);
Tensor broadcast_scalar(const Tensor& s, Shape shape);
Tensor expand_groups(const Tensor& m, std::int64_t group_size);
Tensor sum_groups(const Tensor& m, std::int64_t groups);

Tensor scale(const Tensor& x, double c);
Tensor offset(const Tensor& x, double c);

/// Per-sample group normalization over the channel axis with affine scale and
/// shift. x is [n,c] (or [c], treated as one sample); c must divide by groups.
Tensor group_norm(const Tensor& x, std::int64_t groups, double eps,
                  const Tensor& gn_scale, const Tensor& gn_shift);

/// Mean over elements of softplus(z) - z*y; y may be any value in [0,1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// Mean squared error.
Tensor squared_error(const Tensor& pred, const Tensor& target);

namespace detail {
/// Zero-embed `x` so that it occupies [start, start+len) along `axis` of a
/// tensor whose extent along `axis` is `extent`. Backward pair of slice().
Tensor pad_slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t extent);
/// Recompute a node's forward value from its parents' current data.
std::vector<double> eval_forward(const Node& n);
} // namespace detail

} // namespace timl
