#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "c123/rng.hpp"

namespace c123 {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

struct AutogradNode;

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;  // row-major
    std::vector<float> grad;                   // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<AutogradNode> node;

    int64_t numel() const { return numel_of(shape); }
    bool needs_grad() const { return requires_grad || node != nullptr; }
};

// Backward-graph record of one op: parents it reads, and a function that
// scatters d(loss)/d(out) into the parents' grad buffers. Node ids increase
// with creation order, which gives a valid reverse topological order.
struct AutogradNode {
    uint64_t id;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl& out)> backward;
};

// Value-semantics handle over a shared immutable buffer. Gradient buffers are
// the only mutable part after construction.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, float v, bool requires_grad = false);
    static Tensor from(const Shape& s, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float v);
    static Tensor randn(const Shape& s, Rng& rng, bool requires_grad = false);
    static Tensor uniform(const Shape& s, Rng& rng, float lo, float hi, bool requires_grad = false);

    bool defined() const { return p_ != nullptr; }
    const Shape& shape() const { return p_->shape; }
    int64_t numel() const { return p_->numel(); }
    int64_t dim(int i) const;
    int rank() const { return static_cast<int>(p_->shape.size()); }

    float* data() { return p_->data->data(); }
    const float* data() const { return p_->data->data(); }
    float item() const;

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        p_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }
    // d(loss)/d(this); allocated zero-filled on first access.
    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    void zero_grad();

    std::shared_ptr<TensorImpl> impl() const { return p_; }

    // Detached copy of the values; no graph, no grad.
    Tensor detach() const;

  private:
    std::shared_ptr<TensorImpl> p_;
};

// Autograd can be disabled (sampling, evaluation) so forward passes build no
// graph. Scoped, thread-local.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

  private:
    bool prev_;
};
bool grad_enabled();

// --- elementwise (trailing-dimension broadcasting) ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float s);
Tensor mul(const Tensor& a, float s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, float s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, float s) { return add(a, -s); }
inline Tensor operator*(const Tensor& a, float s) { return mul(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
// Gradient is zero outside [lo,hi].
Tensor clamp(const Tensor& a, float lo, float hi);

// --- structure ---
Tensor reshape(const Tensor& a, const Shape& s);  // zero-copy alias
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor upsample_nearest2x(const Tensor& x);  // [B,C,H,W] -> [B,C,2H,2W]

// --- contraction / reduction ---
// a: [...,m,k] x b: [...,k,n] -> [...,m,n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sum_all(const Tensor& a);   // scalar
Tensor mean_all(const Tensor& a);  // scalar
Tensor sum_axis(const Tensor& a, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, int axis, bool keepdim = false);

// --- nn primitives ---
// Numerically stabilized by max subtraction; rows sum to 1.
Tensor softmax(const Tensor& a, int axis);
// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw]; symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
// gamma/beta: [C]; statistics per (item, group) over (C/groups, H, W).
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// Populates grad buffers of everything reachable from `loss` (which must be
// scalar). Repeated calls accumulate; zero_grad() resets.
void backward(const Tensor& loss);

// Escape hatch for ops with hand-written backward passes. `backward_fn`
// receives d(loss)/d(out) and an accumulate callback that adds a full-shape
// gradient buffer into the chosen parent.
using CustomAccumFn = std::function<void(size_t parent_index, const float* grad)>;
Tensor custom_op(const std::vector<Tensor>& parents, const Shape& out_shape,
                 std::vector<float> out_values,
                 std::function<void(const float* gout, const CustomAccumFn& accum)> backward_fn);

}  // namespace c123
