// SPDX-License-Identifier: Apache-2.0
#include "timl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

namespace timl {

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw Error("ParamSet: unknown parameter '" + name + "'");
    return it->second;
}

void ParamSet::set(const std::string& name, Tensor t) {
    auto it = values_.find(name);
    if (it == values_.end()) throw Error("ParamSet: cannot add parameter '" + name + "' after initialization");
    if (it->second.shape() != t.shape())
        throw ShapeError("ParamSet: shape of '" + name + "' is immutable, " +
                         shape_str(it->second.shape()) + " vs " + shape_str(t.shape()));
    it->second = std::move(t);
}

std::int64_t ParamSet::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : values_) n += t.numel();
    return n;
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [name, t] : values_) out.push_back(name);
    return out;
}

ParamSet ParamSet::detached() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : values_) out.emplace(name, t.detach());
    return ParamSet(std::move(out));
}

ParamSet ParamSet::as_variables() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : values_) out.emplace(name, tensor(t.shape(), t.values(), true));
    return ParamSet(std::move(out));
}

namespace {

// Iterative post-order DFS over the differentiable subgraph. The order depends
// only on graph structure (parents are visited in recorded order), never on
// node creation time, so traversal is deterministic across threads.
std::vector<const Node*> topo_order(const Node* root, bool grad_only) {
    std::vector<const Node*> order;
    std::unordered_set<const Node*> done;
    std::vector<std::pair<const Node*, std::size_t>> stack;
    if (grad_only && !root->requires_grad) return order;
    stack.emplace_back(root, 0);
    std::unordered_set<const Node*> on_stack{root};
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            const Node* p = node->parents[next].node_ptr();
            ++next;
            if (done.count(p) || on_stack.count(p)) continue;
            if (grad_only && !p->requires_grad) continue;
            stack.emplace_back(p, 0);
            on_stack.insert(p);
            descended = true;
            break;
        }
        if (descended) continue;
        order.push_back(node);
        done.insert(node);
        on_stack.erase(node);
        stack.pop_back();
    }
    return order;
}

// Parent adjoints of a node given its own adjoint, expressed with the public
// primitives so the results are differentiable again.
std::vector<Tensor> backward(const Node& n, const Tensor& g) {
    switch (n.op) {
    case OpKind::leaf:
        return {};
    case OpKind::matmul:
        return {matmul(g, transpose(n.parents[1])), matmul(transpose(n.parents[0]), g)};
    case OpKind::add:
        return {g, g};
    case OpKind::sub:
        return {g, scale(g, -1.0)};
    case OpKind::mul:
        return {mul(g, n.parents[1]), mul(g, n.parents[0])};
    case OpKind::unary:
        return {mul(g, unary(n.parents[0], n.ukind, n.order + 1))};
    case OpKind::concat: {
        std::vector<Tensor> out;
        std::int64_t off = 0;
        for (const Tensor& p : n.parents) {
            std::int64_t len = p.rank() == 1 ? p.dim(0) : p.dim(static_cast<std::size_t>(n.axis));
            out.push_back(slice(g, n.axis, off, len));
            off += len;
        }
        return out;
    }
    case OpKind::slice: {
        const Tensor& x = n.parents[0];
        std::int64_t ext = x.rank() == 1 ? x.dim(0) : x.dim(static_cast<std::size_t>(n.axis));
        return {detail::pad_slice(g, n.axis, n.start, ext)};
    }
    case OpKind::pad_slice: {
        const Tensor& x = n.parents[0];
        std::int64_t len = x.rank() == 1 ? x.dim(0) : x.dim(static_cast<std::size_t>(n.axis));
        return {slice(g, n.axis, n.start, len)};
    }
    case OpKind::mean_all: {
        const Tensor& x = n.parents[0];
        double inv = 1.0 / static_cast<double>(x.numel());
        return {scale(broadcast_scalar(g, x.shape()), inv)};
    }
    case OpKind::sum_all:
        return {broadcast_scalar(g, n.parents[0].shape())};
    case OpKind::transpose:
        return {transpose(g)};
    case OpKind::reshape:
        return {reshape(g, n.parents[0].shape())};
    case OpKind::bcast_rows:
        return {sum_rows(g)};
    case OpKind::sum_rows:
        return {broadcast_rows(g, n.parents[0].dim(0))};
    case OpKind::bcast_scalar:
        return {reshape(sum(g), n.parents[0].shape())};
    case OpKind::expand_groups:
        return {sum_groups(g, n.parents[0].dim(1))};
    case OpKind::sum_groups: {
        std::int64_t gsize = n.parents[0].dim(1) / n.extent;
        return {expand_groups(g, gsize)};
    }
    case OpKind::scale_const:
        return {scale(g, n.cval)};
    case OpKind::add_const:
        return {g};
    }
    throw Error("backward: unknown op");
}

} // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, const GradOptions& opts) {
    if (!loss.defined() || loss.numel() != 1)
        throw Error("grad: loss must be a defined scalar");
    for (const Tensor& w : wrt)
        if (!w.requires_grad())
            throw Error("grad: parameter does not require grad (not on the tape)");

    std::unordered_map<const Node*, Tensor> adjoint;
    if (loss.requires_grad()) {
        auto order = topo_order(loss.node_ptr(), /*grad_only=*/true);
        adjoint.emplace(loss.node_ptr(), ones(loss.shape()));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const Node* node = *it;
            auto found = adjoint.find(node);
            if (found == adjoint.end() || node->parents.empty()) continue;
            std::vector<Tensor> pgrads = backward(*node, found->second);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                const Node* p = node->parents[i].node_ptr();
                if (!p->requires_grad) continue;
                auto slot = adjoint.find(p);
                if (slot == adjoint.end()) {
                    adjoint.emplace(p, pgrads[i]);
                } else {
                    slot->second = add(slot->second, pgrads[i]);
                }
            }
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        auto it = adjoint.find(w.node_ptr());
        if (it == adjoint.end()) {
            if (!opts.allow_unused)
                throw Error("grad: parameter is not reachable from the loss");
            out.push_back(zeros(w.shape()));
        } else {
            out.push_back(opts.create_graph ? it->second : it->second.detach());
        }
    }
    return out;
}

ParamSet grad(const Tensor& loss, const ParamSet& params, const GradOptions& opts) {
    std::vector<Tensor> wrt;
    std::vector<std::string> names;
    for (const auto& [name, t] : params) {
        names.push_back(name);
        wrt.push_back(t);
    }
    std::vector<Tensor> gs = grad(loss, wrt, opts);
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], gs[i]);
    return ParamSet(std::move(out));
}

Tape Tape::trace(const Tensor& root) {
    Tape t;
    auto order = topo_order(root.node_ptr(), /*grad_only=*/false);
    t.nodes.reserve(order.size());
    // topo_order returns post-order (inputs before consumers already)
    std::unordered_map<const Node*, Tensor> handles;
    // Rebuild Tensor handles by walking from the root; cheapest is a second
    // traversal keeping the shared_ptr alive through parents.
    std::vector<Tensor> stack{root};
    std::unordered_set<const Node*> seen;
    while (!stack.empty()) {
        Tensor cur = stack.back();
        stack.pop_back();
        if (!seen.insert(cur.node_ptr()).second) continue;
        handles.emplace(cur.node_ptr(), cur);
        for (const Tensor& p : cur.node().parents) stack.push_back(p);
    }
    for (const Node* n : order) t.nodes.push_back(handles.at(n));
    return t;
}

bool Tape::replay_matches() const {
    for (const Tensor& t : nodes) {
        const Node& n = t.node();
        if (n.op == OpKind::leaf) continue;
        std::vector<double> redo = detail::eval_forward(n);
        if (redo.size() != n.data.size()) return false;
        if (std::memcmp(redo.data(), n.data.data(), redo.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

double finite_diff_check(const std::function<Tensor(const ParamSet&)>& f,
                         const ParamSet& params, double h) {
    ParamSet vars = params.as_variables();
    Tensor loss = f(vars);
    ParamSet analytic = grad(loss, vars, {.create_graph = false, .allow_unused = true});

    double worst = 0.0;
    for (const auto& [name, p] : vars) {
        const Tensor& g = analytic.at(name);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            double x0 = p[i];
            ParamSet probe = vars;
            probe.set(name, with_element(p, i, x0 + h));
            double fp = f(probe).item();
            probe.set(name, with_element(p, i, x0 - h));
            double fm = f(probe).item();
            double fd = (fp - fm) / (2.0 * h);
            double ana = g[i];
            double denom = std::max({std::fabs(fd), std::fabs(ana), 1.0});
            worst = std::max(worst, std::fabs(fd - ana) / denom);
        }
    }
    return worst;
}

} // namespace timl
