// SPDX-License-Identifier: Apache-2.0
#include "timl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace timl {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    // log(1 + e^x) without overflow on either side
    return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double unary_value(UnaryKind kind, int order, double x) {
    switch (kind) {
    case UnaryKind::sigmoid: {
        double s = stable_sigmoid(x);
        switch (order) {
        case 0: return s;
        case 1: return s * (1.0 - s);
        case 2: return s * (1.0 - s) * (1.0 - 2.0 * s);
        case 3: return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s);
        default: break;
        }
        break;
    }
    case UnaryKind::tanh: {
        double t = std::tanh(x);
        double sech2 = 1.0 - t * t;
        switch (order) {
        case 0: return t;
        case 1: return sech2;
        case 2: return -2.0 * t * sech2;
        case 3: return -2.0 * sech2 * (1.0 - 3.0 * t * t);
        default: break;
        }
        break;
    }
    case UnaryKind::gelu: {
        switch (order) {
        case 0: return x * norm_cdf(x);
        case 1: return norm_cdf(x) + x * norm_pdf(x);
        case 2: return norm_pdf(x) * (2.0 - x * x);
        case 3: return norm_pdf(x) * (x * x * x - 4.0 * x);
        default: break;
        }
        break;
    }
    case UnaryKind::softplus: {
        double s = stable_sigmoid(x);
        switch (order) {
        case 0: return stable_softplus(x);
        case 1: return s;
        case 2: return s * (1.0 - s);
        case 3: return s * (1.0 - s) * (1.0 - 2.0 * s);
        default: break;
        }
        break;
    }
    case UnaryKind::rsqrt: {
        switch (order) {
        case 0: return 1.0 / std::sqrt(x);
        case 1: return -0.5 * std::pow(x, -1.5);
        case 2: return 0.75 * std::pow(x, -2.5);
        case 3: return -1.875 * std::pow(x, -3.5);
        default: break;
        }
        break;
    }
    }
    throw Error("unary derivative order beyond 3 is not supported");
}

const char* unary_name(UnaryKind kind) {
    switch (kind) {
    case UnaryKind::sigmoid: return "sigmoid";
    case UnaryKind::tanh: return "tanh";
    case UnaryKind::gelu: return "gelu";
    case UnaryKind::softplus: return "softplus";
    case UnaryKind::rsqrt: return "rsqrt";
    }
    return "?";
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

std::shared_ptr<const Node> make_node(Node&& n) {
    return std::make_shared<const Node>(std::move(n));
}

Tensor finish(Node&& n) {
    n.data = detail::eval_forward(n);
    for (double v : n.data) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string("non-finite value produced by op '") + op_name(n.op) +
                                 "' with shape " + shape_str(n.shape));
        }
    }
    for (const Tensor& p : n.parents) {
        if (p.requires_grad()) {
            n.requires_grad = true;
            break;
        }
    }
    return Tensor(make_node(std::move(n)));
}

} // namespace

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

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

const char* op_name(OpKind op) {
    switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::unary: return "unary";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::pad_slice: return "pad_slice";
    case OpKind::mean_all: return "mean";
    case OpKind::sum_all: return "sum";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::bcast_rows: return "bcast_rows";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::bcast_scalar: return "bcast_scalar";
    case OpKind::expand_groups: return "expand_groups";
    case OpKind::sum_groups: return "sum_groups";
    case OpKind::scale_const: return "scale_const";
    case OpKind::add_const: return "add_const";
    }
    return "?";
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const {
    Node n;
    n.op = OpKind::leaf;
    n.shape = node_->shape;
    n.data = node_->data;
    n.requires_grad = false;
    return Tensor(make_node(std::move(n)));
}

namespace detail {

std::vector<double> eval_forward(const Node& n) {
    auto pdata = [&](std::size_t i) -> const std::vector<double>& { return n.parents[i].values(); };
    auto pshape = [&](std::size_t i) -> const Shape& { return n.parents[i].shape(); };

    switch (n.op) {
    case OpKind::leaf:
        return n.data;
    case OpKind::matmul: {
        const auto& a = pdata(0);
        const auto& b = pdata(1);
        std::int64_t nr = pshape(0)[0], nk = pshape(0)[1], nc = pshape(1)[1];
        std::vector<double> out(static_cast<std::size_t>(nr * nc), 0.0);
        for (std::int64_t i = 0; i < nr; ++i) {
            for (std::int64_t k = 0; k < nk; ++k) {
                double aik = a[static_cast<std::size_t>(i * nk + k)];
                const double* brow = b.data() + k * nc;
                double* orow = out.data() + i * nc;
                for (std::int64_t j = 0; j < nc; ++j) orow[j] += aik * brow[j];
            }
        }
        return out;
    }
    case OpKind::add: {
        std::vector<double> out = pdata(0);
        const auto& b = pdata(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
    }
    case OpKind::sub: {
        std::vector<double> out = pdata(0);
        const auto& b = pdata(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        return out;
    }
    case OpKind::mul: {
        std::vector<double> out = pdata(0);
        const auto& b = pdata(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        return out;
    }
    case OpKind::unary: {
        std::vector<double> out = pdata(0);
        for (double& v : out) v = unary_value(n.ukind, n.order, v);
        return out;
    }
    case OpKind::concat: {
        std::vector<double> out(static_cast<std::size_t>(numel(n.shape)));
        if (n.axis == 0 || n.shape.size() == 1) {
            std::size_t off = 0;
            for (const Tensor& p : n.parents) {
                std::memcpy(out.data() + off, p.values().data(), p.values().size() * sizeof(double));
                off += p.values().size();
            }
        } else {
            std::int64_t nr = n.shape[0], nc = n.shape[1];
            std::int64_t coff = 0;
            for (const Tensor& p : n.parents) {
                std::int64_t pc = p.shape()[1];
                for (std::int64_t i = 0; i < nr; ++i)
                    std::memcpy(out.data() + i * nc + coff, p.values().data() + i * pc,
                                static_cast<std::size_t>(pc) * sizeof(double));
                coff += pc;
            }
        }
        return out;
    }
    case OpKind::slice: {
        const auto& x = pdata(0);
        const Shape& xs = pshape(0);
        std::vector<double> out(static_cast<std::size_t>(numel(n.shape)));
        if (xs.size() == 1 || n.axis == 0) {
            std::int64_t inner = xs.size() == 2 ? xs[1] : 1;
            std::memcpy(out.data(), x.data() + n.start * inner, out.size() * sizeof(double));
        } else {
            std::int64_t nr = xs[0], xc = xs[1], len = n.shape[1];
            for (std::int64_t i = 0; i < nr; ++i)
                std::memcpy(out.data() + i * len, x.data() + i * xc + n.start,
                            static_cast<std::size_t>(len) * sizeof(double));
        }
        return out;
    }
    case OpKind::pad_slice: {
        const auto& x = pdata(0);
        const Shape& xs = pshape(0);
        std::vector<double> out(static_cast<std::size_t>(numel(n.shape)), 0.0);
        if (xs.size() == 1 || n.axis == 0) {
            std::int64_t inner = xs.size() == 2 ? xs[1] : 1;
            std::memcpy(out.data() + n.start * inner, x.data(), x.size() * sizeof(double));
        } else {
            std::int64_t nr = xs[0], xc = xs[1], nc = n.shape[1];
            for (std::int64_t i = 0; i < nr; ++i)
                std::memcpy(out.data() + i * nc + n.start, x.data() + i * xc,
                            static_cast<std::size_t>(xc) * sizeof(double));
        }
        return out;
    }
    case OpKind::mean_all: {
        const auto& x = pdata(0);
        double s = 0.0;
        for (double v : x) s += v;
        return {s / static_cast<double>(x.size())};
    }
    case OpKind::sum_all: {
        const auto& x = pdata(0);
        double s = 0.0;
        for (double v : x) s += v;
        return {s};
    }
    case OpKind::transpose: {
        const auto& x = pdata(0);
        std::int64_t nr = pshape(0)[0], nc = pshape(0)[1];
        std::vector<double> out(x.size());
        for (std::int64_t i = 0; i < nr; ++i)
            for (std::int64_t j = 0; j < nc; ++j)
                out[static_cast<std::size_t>(j * nr + i)] = x[static_cast<std::size_t>(i * nc + j)];
        return out;
    }
    case OpKind::reshape:
        return pdata(0);
    case OpKind::bcast_rows: {
        const auto& v = pdata(0);
        std::vector<double> out(static_cast<std::size_t>(n.extent) * v.size());
        for (std::int64_t i = 0; i < n.extent; ++i)
            std::memcpy(out.data() + static_cast<std::size_t>(i) * v.size(), v.data(),
                        v.size() * sizeof(double));
        return out;
    }
    case OpKind::sum_rows: {
        const auto& m = pdata(0);
        std::int64_t nr = pshape(0)[0], nc = pshape(0)[1];
        std::vector<double> out(static_cast<std::size_t>(nc), 0.0);
        for (std::int64_t i = 0; i < nr; ++i)
            for (std::int64_t j = 0; j < nc; ++j) out[static_cast<std::size_t>(j)] += m[static_cast<std::size_t>(i * nc + j)];
        return out;
    }
    case OpKind::bcast_scalar: {
        double v = pdata(0)[0];
        return std::vector<double>(static_cast<std::size_t>(numel(n.shape)), v);
    }
    case OpKind::expand_groups: {
        const auto& m = pdata(0);
        std::int64_t nr = pshape(0)[0], g = pshape(0)[1], s = n.extent;
        std::vector<double> out(static_cast<std::size_t>(nr * g * s));
        for (std::int64_t i = 0; i < nr; ++i)
            for (std::int64_t k = 0; k < g; ++k) {
                double v = m[static_cast<std::size_t>(i * g + k)];
                for (std::int64_t j = 0; j < s; ++j)
                    out[static_cast<std::size_t>(i * g * s + k * s + j)] = v;
            }
        return out;
    }
    case OpKind::sum_groups: {
        const auto& m = pdata(0);
        std::int64_t nr = pshape(0)[0], nc = pshape(0)[1], g = n.extent, s = nc / g;
        std::vector<double> out(static_cast<std::size_t>(nr * g), 0.0);
        for (std::int64_t i = 0; i < nr; ++i)
            for (std::int64_t k = 0; k < g; ++k) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < s; ++j)
                    acc += m[static_cast<std::size_t>(i * nc + k * s + j)];
                out[static_cast<std::size_t>(i * g + k)] = acc;
            }
        return out;
    }
    case OpKind::scale_const: {
        std::vector<double> out = pdata(0);
        for (double& v : out) v *= n.cval;
        return out;
    }
    case OpKind::add_const: {
        std::vector<double> out = pdata(0);
        for (double& v : out) v += n.cval;
        return out;
    }
    }
    throw Error("eval_forward: unknown op");
}

Tensor pad_slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t extent) {
    Node n;
    n.op = OpKind::pad_slice;
    n.axis = axis;
    n.start = start;
    n.extent = extent;
    n.shape = x.shape();
    if (x.rank() == 1) {
        n.shape[0] = extent;
    } else {
        n.shape[static_cast<std::size_t>(axis)] = extent;
    }
    require(start >= 0 && start + (x.rank() == 1 ? x.dim(0) : x.dim(static_cast<std::size_t>(axis))) <= extent,
            "pad_slice: range out of bounds");
    n.parents = {x};
    return finish(std::move(n));
}

} // namespace detail

Tensor tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    Node n;
    n.op = OpKind::leaf;
    n.shape = std::move(shape);
    n.data = std::move(data);
    n.requires_grad = requires_grad;
    return Tensor(make_node(std::move(n)));
}

Tensor scalar(double v) { return tensor({}, {v}); }
Tensor zeros(Shape shape) {
    auto n = static_cast<std::size_t>(numel(shape));
    return tensor(std::move(shape), std::vector<double>(n, 0.0));
}
Tensor ones(Shape shape) {
    auto n = static_cast<std::size_t>(numel(shape));
    return tensor(std::move(shape), std::vector<double>(n, 1.0));
}
Tensor full(Shape shape, double v) {
    auto n = static_cast<std::size_t>(numel(shape));
    return tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor with_element(const Tensor& t, std::int64_t idx, double v) {
    std::vector<double> data = t.values();
    data.at(static_cast<std::size_t>(idx)) = v;
    return tensor(t.shape(), std::move(data), t.requires_grad());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
    require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                      " x " + shape_str(b.shape()));
    Node n;
    n.op = OpKind::matmul;
    n.shape = {a.dim(0), b.dim(1)};
    n.parents = {a, b};
    return finish(std::move(n));
}

namespace {
Tensor binary_same_shape(OpKind op, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), std::string(op_name(op)) + ": shapes differ, " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Node n;
    n.op = op;
    n.shape = a.shape();
    n.parents = {a, b};
    return finish(std::move(n));
}
} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_same_shape(OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_same_shape(OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_same_shape(OpKind::mul, a, b); }

Tensor unary(const Tensor& x, UnaryKind kind, int order) {
    if (order < 0 || order > 3)
        throw Error(std::string("unary '") + unary_name(kind) + "': derivative order " +
                    std::to_string(order) + " not supported");
    Node n;
    n.op = OpKind::unary;
    n.ukind = kind;
    n.order = order;
    n.shape = x.shape();
    n.parents = {x};
    return finish(std::move(n));
}

Tensor sigmoid(const Tensor& x) { return unary(x, UnaryKind::sigmoid); }
Tensor tanh(const Tensor& x) { return unary(x, UnaryKind::tanh); }
Tensor gelu(const Tensor& x) { return unary(x, UnaryKind::gelu); }
Tensor softplus(const Tensor& x) { return unary(x, UnaryKind::softplus); }
Tensor rsqrt(const Tensor& x) { return unary(x, UnaryKind::rsqrt); }

Tensor concat(std::span<const Tensor> parts, std::int64_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    require(s0.size() >= 1 && s0.size() <= 2, "concat: rank-1 or rank-2 inputs required");
    require(axis >= 0 && axis < static_cast<std::int64_t>(s0.size()), "concat: bad axis");
    std::int64_t along = 0;
    for (const Tensor& p : parts) {
        require(p.rank() == s0.size(), "concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (static_cast<std::int64_t>(d) != axis)
                require(p.shape()[d] == s0[d], "concat: off-axis extent mismatch");
        along += p.shape()[static_cast<std::size_t>(axis)];
    }
    Node n;
    n.op = OpKind::concat;
    n.axis = axis;
    n.shape = s0;
    n.shape[static_cast<std::size_t>(axis)] = along;
    n.parents.assign(parts.begin(), parts.end());
    return finish(std::move(n));
}

Tensor concat(const Tensor& a, const Tensor& b, std::int64_t axis) {
    const Tensor parts[] = {a, b};
    return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t len) {
    require(x.rank() >= 1 && x.rank() <= 2, "slice: rank-1 or rank-2 input required");
    require(axis >= 0 && axis < static_cast<std::int64_t>(x.rank()), "slice: bad axis");
    std::int64_t ext = x.shape()[static_cast<std::size_t>(axis)];
    require(start >= 0 && len >= 0 && start + len <= ext, "slice: range out of bounds");
    Node n;
    n.op = OpKind::slice;
    n.axis = axis;
    n.start = start;
    n.shape = x.shape();
    n.shape[static_cast<std::size_t>(axis)] = len;
    n.parents = {x};
    return finish(std::move(n));
}

Tensor mean(const Tensor& x) {
    require(x.numel() > 0, "mean: empty tensor");
    Node n;
    n.op = OpKind::mean_all;
    n.shape = {};
    n.parents = {x};
    return finish(std::move(n));
}

Tensor sum(const Tensor& x) {
    Node n;
    n.op = OpKind::sum_all;
    n.shape = {};
    n.parents = {x};
    return finish(std::move(n));
}

Tensor transpose(const Tensor& m) {
    require(m.rank() == 2, "transpose: rank-2 input required");
    Node n;
    n.op = OpKind::transpose;
    n.shape = {m.dim(1), m.dim(0)};
    n.parents = {m};
    return finish(std::move(n));
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(numel(shape) == x.numel(), "reshape: element count mismatch");
    Node n;
    n.op = OpKind::reshape;
    n.shape = std::move(shape);
    n.parents = {x};
    return finish(std::move(n));
}

Tensor broadcast_rows(const Tensor& v, std::int64_t n_rows) {
    require(v.rank() == 1, "broadcast_rows: rank-1 input required");
    require(n_rows >= 1, "broadcast_rows: bad row count");
    Node n;
    n.op = OpKind::bcast_rows;
    n.extent = n_rows;
    n.shape = {n_rows, v.dim(0)};
    n.parents = {v};
    return finish(std::move(n));
}

Tensor sum_rows(const Tensor& m) {
    require(m.rank() == 2, "sum_rows: rank-2 input required");
    Node n;
    n.op = OpKind::sum_rows;
    n.shape = {m.dim(1)};
    n.parents = {m};
    return finish(std::move(n));
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
    require(s.numel() == 1, "broadcast_scalar: input must be scalar");
    Node n;
    n.op = OpKind::bcast_scalar;
    n.shape = std::move(shape);
    n.parents = {s};
    return finish(std::move(n));
}

Tensor expand_groups(const Tensor& m, std::int64_t group_size) {
    require(m.rank() == 2, "expand_groups: rank-2 input required");
    require(group_size >= 1, "expand_groups: bad group size");
    Node n;
    n.op = OpKind::expand_groups;
    n.extent = group_size;
    n.shape = {m.dim(0), m.dim(1) * group_size};
    n.parents = {m};
    return finish(std::move(n));
}

Tensor sum_groups(const Tensor& m, std::int64_t groups) {
    require(m.rank() == 2, "sum_groups: rank-2 input required");
    if (groups < 1 || m.dim(1) % groups != 0)
        throw ConfigError("sum_groups: channel count " + std::to_string(m.dim(1)) +
                          " not divisible by groups " + std::to_string(groups));
    Node n;
    n.op = OpKind::sum_groups;
    n.extent = groups;
    n.shape = {m.dim(0), groups};
    n.parents = {m};
    return finish(std::move(n));
}

Tensor scale(const Tensor& x, double c) {
    Node n;
    n.op = OpKind::scale_const;
    n.cval = c;
    n.shape = x.shape();
    n.parents = {x};
    return finish(std::move(n));
}

Tensor offset(const Tensor& x, double c) {
    Node n;
    n.op = OpKind::add_const;
    n.cval = c;
    n.shape = x.shape();
    n.parents = {x};
    return finish(std::move(n));
}

Tensor group_norm(const Tensor& x, std::int64_t groups, double eps,
                  const Tensor& gn_scale, const Tensor& gn_shift) {
    bool was_1d = x.rank() == 1;
    Tensor m = was_1d ? reshape(x, {1, x.dim(0)}) : x;
    require(m.rank() == 2, "group_norm: rank-1 or rank-2 input required");
    std::int64_t channels = m.dim(1);
    if (groups < 1 || channels % groups != 0)
        throw ConfigError("group_norm: channels " + std::to_string(channels) +
                          " not divisible by groups " + std::to_string(groups));
    require(gn_scale.rank() == 1 && gn_scale.dim(0) == channels, "group_norm: scale width mismatch");
    require(gn_shift.rank() == 1 && gn_shift.dim(0) == channels, "group_norm: shift width mismatch");

    std::int64_t gsize = channels / groups;
    std::int64_t n_rows = m.dim(0);
    double inv = 1.0 / static_cast<double>(gsize);

    Tensor mu = scale(sum_groups(m, groups), inv);                       // [n,g]
    Tensor centered = sub(m, expand_groups(mu, gsize));                  // [n,c]
    Tensor var = scale(sum_groups(mul(centered, centered), groups), inv);// [n,g]
    Tensor inv_sd = rsqrt(offset(var, eps));                             // [n,g]
    Tensor normed = mul(centered, expand_groups(inv_sd, gsize));         // [n,c]
    Tensor out = add(mul(normed, broadcast_rows(gn_scale, n_rows)),
                     broadcast_rows(gn_shift, n_rows));
    return was_1d ? reshape(out, x.shape()) : out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    require(logits.shape() == targets.shape(), "bce_with_logits: shape mismatch");
    // softplus(z) - z*y, averaged; equals -[y log s(z) + (1-y) log(1-s(z))]
    return mean(sub(softplus(logits), mul(logits, targets)));
}

Tensor squared_error(const Tensor& pred, const Tensor& target) {
    require(pred.shape() == target.shape(), "squared_error: shape mismatch");
    Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

} // namespace timl
