// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "timl/tensor.hpp"

namespace timl {

/// Named, ordered collection of tensors (learner or encoder parameters).
/// The name set is fixed after construction and shapes are immutable; set()
/// replaces a value but never adds a name or changes a shape.
class ParamSet {
public:
    ParamSet() = default;
    explicit ParamSet(std::map<std::string, Tensor> values) : values_(std::move(values)) {}

    bool has(const std::string& name) const { return values_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    void set(const std::string& name, Tensor t);

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    std::int64_t total_elements() const;
    std::vector<std::string> names() const;

    auto begin() const { return values_.begin(); }
    auto end() const { return values_.end(); }

    /// All values detached from any graph (leaf snapshots, requires_grad off).
    ParamSet detached() const;
    /// Leaf snapshots with requires_grad on (fresh differentiation roots).
    ParamSet as_variables() const;

private:
    std::map<std::string, Tensor> values_;
};

struct GradOptions {
    /// When true, gradient tensors remain connected to the tape so they can be
    /// differentiated again (second order). When false, results are detached.
    bool create_graph = false;
    /// When true, parameters unreachable from the loss yield zero gradients
    /// instead of an error.
    bool allow_unused = false;
};

/// Reverse-mode gradients of a scalar loss with respect to `wrt`.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt,
                         const GradOptions& opts = {});
/// ParamSet convenience overload; result carries the same names.
ParamSet grad(const Tensor& loss, const ParamSet& params, const GradOptions& opts = {});

/// Ordered view of the computation graph reachable from a root: every node's
/// inputs precede it. Replaying the tape recomputes forward values and must
/// reproduce them bit-exactly.
struct Tape {
    std::vector<Tensor> nodes;
    bool retain_graph = true;

    static Tape trace(const Tensor& root);
    std::size_t size() const { return nodes.size(); }
    /// Recomputes every non-leaf node from its parents and compares bitwise.
    bool replay_matches() const;
};

/// Worst relative error between analytic gradients of `f` and central finite
/// differences with step `h`, over all coordinates of all parameters.
/// Relative error is |fd - g| / max(|fd|, |g|, 1). `f` must be deterministic.
double finite_diff_check(const std::function<Tensor(const ParamSet&)>& f,
                         const ParamSet& params, double h);

} // namespace timl
