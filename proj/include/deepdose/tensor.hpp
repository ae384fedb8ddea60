#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace deepdose {

using Shape = std::vector<std::size_t>;

// The single pseudo-random generator used across the library. mt19937_64 is
// fully specified by the standard, so a seed pins every draw.
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
Shape row_major_strides(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

// Receives the gradient flowing into an op's output and accumulates the
// contributions into the op's inputs.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

// Dense row-major array of doubles with optional reverse-mode gradient.
// Copies are shallow handles; op results never alias their inputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from_values(const Shape& shape, std::vector<double> values);
    static Tensor randn(const Shape& shape, double mean, double stddev, Rng& rng);
    static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng);
    static Tensor scalar(double value) { return full({1}, value); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Direct write access. Only meant for leaves (parameter updates,
    // hand-built fixtures); mutating a tensor already consumed by a
    // recorded op invalidates that op's backward rule.
    std::span<double> mutable_data();

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag = true);
    bool is_leaf() const;
    const std::shared_ptr<Node>& grad_fn() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    // Gradient buffer, allocated as zeros on first access.
    std::span<double> grad_buffer() const;
    void zero_grad() const;

    // Same values, no history, fresh storage.
    Tensor detach() const;

    // Identity of the underlying storage (tape bookkeeping).
    const void* id() const { return impl_.get(); }

    // Builds an op result; checks every value is finite and records the
    // backward rule when gradient mode is on and an input requires grad.
    static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                              std::vector<Tensor> inputs, BackwardFn backward);

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

// Scoped switch for gradient recording (define-by-run).
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool flag);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Recorded ops reachable from a root, in topological order (inputs first).
class Tape {
public:
    static Tape record(const Tensor& root);

    std::size_t size() const { return entries_.size(); }
    const std::vector<Tensor>& entries() const { return entries_; }

    // Seeds d(root)/d(root) = 1 and runs every backward rule exactly once,
    // in reverse tape order. Leaf gradients accumulate across calls.
    void run_backward(const Tensor& root) const;

private:
    std::vector<Tensor> entries_;
};

// Populates grads of every requires_grad leaf reachable from a scalar loss.
void backward(const Tensor& loss);

// Elementwise and structural ops. All differentiable.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Concatenation along `axis` (the channel axis, 1, for 5-D volumes).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 1);
// padding[i] = {before, after} zeros on dimension i.
Tensor pad_zeros(const Tensor& x, const std::vector<std::pair<std::size_t, std::size_t>>& padding);
Tensor crop(const Tensor& x, const Shape& offsets, const Shape& extents);

}  // namespace deepdose
