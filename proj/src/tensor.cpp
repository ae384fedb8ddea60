#include "deepdose/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "deepdose/error.hpp"
#include "deepdose/parallel.hpp"

namespace deepdose {

namespace {

thread_local bool g_grad_enabled = true;
std::size_t g_workers = 1;

void check_shape(const Shape& shape) {
    for (std::size_t extent : shape) {
        if (extent == 0) throw InvalidShape("tensor extent must be >= 1, got " + to_string(shape));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                            to_string(b.shape()));
    }
}

}  // namespace

void set_worker_count(std::size_t workers) { g_workers = std::max<std::size_t>(1, workers); }
std::size_t worker_count() { return g_workers; }

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Shape row_major_strides(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

struct Tensor::Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values) {
    check_shape(shape);
    if (values.size() != deepdose::numel(shape)) {
        throw InvalidShape("value count " + std::to_string(values.size()) + " does not fill shape " +
                           to_string(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    check_shape(shape);
    return from_values(shape, std::vector<double>(deepdose::numel(shape), value));
}

Tensor Tensor::randn(const Shape& shape, double mean, double stddev, Rng& rng) {
    check_shape(shape);
    std::normal_distribution<double> dist(mean, stddev);
    std::vector<double> values(deepdose::numel(shape));
    for (double& v : values) v = dist(rng);
    return from_values(shape, std::move(values));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    check_shape(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(deepdose::numel(shape));
    for (double& v : values) v = dist(rng);
    return from_values(shape, std::move(values));
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!impl_) return {};
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) return {};
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw ContractError("at(): index rank does not match tensor rank");
    const Shape strides = row_major_strides(s);
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw ContractError("at(): index out of range");
        flat += i * strides[axis++];
    }
    return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw ContractError("set_requires_grad on undefined tensor");
    if (impl_->grad_fn) throw ContractError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = flag;
    if (flag && impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return *this;
}

bool Tensor::is_leaf() const { return !impl_ || !impl_->grad_fn; }

const std::shared_ptr<Node>& Tensor::grad_fn() const {
    static const std::shared_ptr<Node> none;
    return impl_ ? impl_->grad_fn : none;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!impl_) return {};
    return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
    if (!impl_) throw ContractError("grad_buffer on undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() const {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_values(shape(), std::vector<double>(data().begin(), data().end())); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> inputs, BackwardFn backward) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(op + ": non-finite value in output");
    }
    Tensor out = from_values(shape, std::move(values));
    const bool track = GradMode::enabled() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (track) {
        out.impl_->requires_grad = true;
        out.impl_->grad_fn = std::make_shared<Node>(Node{std::move(op), std::move(inputs), std::move(backward)});
    }
    return out;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool flag) { g_grad_enabled = flag; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

Tape Tape::record(const Tensor& root) {
    // Iterative DFS post-order; a node seen again while still open is a cycle.
    enum class Mark { Open, Done };
    std::unordered_map<const void*, Mark> marks;
    Tape tape;
    if (!root.grad_fn()) return tape;

    struct Frame {
        Tensor tensor;
        std::size_t next_input = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({root});
    marks[root.id()] = Mark::Open;
    while (!stack.empty()) {
        Frame& top = stack.back();
        const auto& inputs = top.tensor.grad_fn()->inputs;
        if (top.next_input < inputs.size()) {
            const Tensor& child = inputs[top.next_input++];
            if (!child.grad_fn()) continue;
            auto it = marks.find(child.id());
            if (it == marks.end()) {
                marks[child.id()] = Mark::Open;
                stack.push_back({child});
            } else if (it->second == Mark::Open) {
                throw InternalError("cycle detected in recorded graph at op '" + child.grad_fn()->op + "'");
            }
            continue;
        }
        marks[top.tensor.id()] = Mark::Done;
        tape.entries_.push_back(top.tensor);
        stack.pop_back();
    }
    return tape;
}

void Tape::run_backward(const Tensor& root) const {
    // Intermediate gradients are per-pass; leaves keep accumulating.
    for (const Tensor& t : entries_) {
        Tensor handle = t;
        auto g = handle.grad_buffer();
        std::fill(g.begin(), g.end(), 0.0);
    }
    Tensor seed = root;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        const auto& node = it->grad_fn();
        node->backward(it->grad());
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    if (loss.is_leaf()) {
        Tensor seed = loss;
        seed.grad_buffer()[0] += 1.0;
        return;
    }
    Tape::record(loss).run_backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [a, b](std::span<const double> g) mutable {
        for (const Tensor* t : {&a, &b}) {
            if (!t->requires_grad()) continue;
            auto dst = t->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [a, b](std::span<const double> g) mutable {
        if (a.requires_grad()) {
            auto dst = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
        if (b.requires_grad()) {
            auto dst = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [a, b](std::span<const double> g) mutable {
        auto x = a.data();
        auto y = b.data();
        if (a.requires_grad()) {
            auto dst = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
            auto dst = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * x[i];
        }
    });
}

Tensor scalar_mul(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return Tensor::make_result(a.shape(), std::move(out), "scalar_mul", {a},
                               [a, factor](std::span<const double> g) mutable {
                                   auto dst = a.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
                               });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
    return Tensor::make_result(x.shape(), std::move(out), "relu", {x}, [x](std::span<const double> g) mutable {
        auto v = x.data();
        auto dst = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (v[i] > 0.0) dst[i] += g[i];
        }
    });
}

Tensor square(const Tensor& x) {
    std::vector<double> out(x.numel());
    auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * v[i];
    return Tensor::make_result(x.shape(), std::move(out), "square", {x}, [x](std::span<const double> g) mutable {
        auto v = x.data();
        auto dst = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += 2.0 * v[i] * g[i];
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::make_result({1}, {total}, "sum", {x}, [x](std::span<const double> g) mutable {
        auto dst = x.grad_buffer();
        for (double& d : dst) d += g[0];
    });
}

Tensor mean(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const double n = static_cast<double>(x.numel());
    return Tensor::make_result({1}, {total / n}, "mean", {x}, [x, n](std::span<const double> g) mutable {
        auto dst = x.grad_buffer();
        const double share = g[0] / n;
        for (double& d : dst) d += share;
    });
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ContractError("concat: axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ContractError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) {
                throw ContractError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
            }
        }
        out_shape[axis] += s[axis];
    }
    // outer = product of dims before axis, inner = product after axis.
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    std::vector<double> out(numel(out_shape));
    const std::size_t out_row = out_shape[axis] * inner;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t row = p.shape()[axis] * inner;
        auto src = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * row), row,
                        out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
        }
        offset += row;
    }
    return Tensor::make_result(out_shape, std::move(out), "concat", parts,
                               [parts, outer, inner, out_row, axis](std::span<const double> g) mutable {
                                   std::size_t offset = 0;
                                   for (const Tensor& p : parts) {
                                       const std::size_t row = p.shape()[axis] * inner;
                                       if (p.requires_grad()) {
                                           auto dst = p.grad_buffer();
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               for (std::size_t i = 0; i < row; ++i) {
                                                   dst[o * row + i] += g[o * out_row + offset + i];
                                               }
                                           }
                                       }
                                       offset += row;
                                   }
                               });
}

namespace {

// Copies the box `extents` starting at `src_offset` in `src` to `dst_offset`
// in `dst` (row-major), or accumulates when `accumulate` is set.
void copy_box(std::span<const double> src, const Shape& src_shape, const Shape& src_offset,
              std::span<double> dst, const Shape& dst_shape, const Shape& dst_offset, const Shape& extents,
              bool accumulate) {
    const std::size_t rank = extents.size();
    const Shape src_strides = row_major_strides(src_shape);
    const Shape dst_strides = row_major_strides(dst_shape);
    const std::size_t rows = numel(extents) / extents[rank - 1];
    const std::size_t run = extents[rank - 1];
    Shape idx(rank, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t s = 0;
        std::size_t d = 0;
        for (std::size_t k = 0; k < rank; ++k) {
            s += (idx[k] + src_offset[k]) * src_strides[k];
            d += (idx[k] + dst_offset[k]) * dst_strides[k];
        }
        if (accumulate) {
            for (std::size_t i = 0; i < run; ++i) dst[d + i] += src[s + i];
        } else {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), run, dst.begin() + static_cast<std::ptrdiff_t>(d));
        }
        // Advance the multi-index over all but the last dimension.
        for (std::size_t k = rank - 1; k-- > 0;) {
            if (++idx[k] < extents[k]) break;
            idx[k] = 0;
        }
    }
}

}  // namespace

Tensor pad_zeros(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& padding) {
    const Shape& in_shape = x.shape();
    if (padding.size() != in_shape.size()) throw ContractError("pad_zeros: one (before, after) pair per dimension");
    Shape out_shape(in_shape.size());
    Shape offset(in_shape.size());
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
        out_shape[d] = in_shape[d] + padding[d].first + padding[d].second;
        offset[d] = padding[d].first;
    }
    std::vector<double> out(numel(out_shape), 0.0);
    const Shape zero(in_shape.size(), 0);
    copy_box(x.data(), in_shape, zero, out, out_shape, offset, in_shape, false);
    return Tensor::make_result(out_shape, std::move(out), "pad_zeros", {x},
                               [x, out_shape, offset, zero](std::span<const double> g) mutable {
                                   copy_box(g, out_shape, offset, x.grad_buffer(), x.shape(), zero, x.shape(), true);
                               });
}

Tensor crop(const Tensor& x, const Shape& offsets, const Shape& extents) {
    const Shape& in_shape = x.shape();
    if (offsets.size() != in_shape.size() || extents.size() != in_shape.size()) {
        throw ContractError("crop: offsets/extents rank mismatch");
    }
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
        if (extents[d] == 0 || offsets[d] + extents[d] > in_shape[d]) {
            throw ContractError("crop: window exceeds tensor extent on dim " + std::to_string(d));
        }
    }
    std::vector<double> out(numel(extents));
    const Shape zero(in_shape.size(), 0);
    copy_box(x.data(), in_shape, offsets, out, extents, zero, extents, false);
    return Tensor::make_result(extents, std::move(out), "crop", {x},
                               [x, offsets, extents, zero](std::span<const double> g) mutable {
                                   copy_box(g, extents, zero, x.grad_buffer(), x.shape(), offsets, extents, true);
                               });
}

}  // namespace deepdose
