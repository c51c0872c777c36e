#include "c123/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "c123/errors.hpp"

namespace c123 {

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

static std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// ---------------------------------------------------------------------------
// Tensor basics

static std::shared_ptr<TensorImpl> new_impl(const Shape& s) {
    auto p = std::make_shared<TensorImpl>();
    p->shape = s;
    p->data = std::make_shared<std::vector<float>>(static_cast<size_t>(numel_of(s)), 0.0f);
    return p;
}

Tensor Tensor::zeros(const Shape& s, bool rg) {
    Tensor t(new_impl(s));
    t.p_->requires_grad = rg;
    return t;
}

Tensor Tensor::full(const Shape& s, float v, bool rg) {
    Tensor t = zeros(s, rg);
    std::fill(t.p_->data->begin(), t.p_->data->end(), v);
    return t;
}

Tensor Tensor::from(const Shape& s, std::vector<float> values, bool rg) {
    if (numel_of(s) != static_cast<int64_t>(values.size()))
        throw ShapeError("tensor data size " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(s));
    auto p = std::make_shared<TensorImpl>();
    p->shape = s;
    p->data = std::make_shared<std::vector<float>>(std::move(values));
    p->requires_grad = rg;
    return Tensor(p);
}

Tensor Tensor::scalar(float v) { return full({1}, v); }

Tensor Tensor::randn(const Shape& s, Rng& rng, bool rg) {
    Tensor t = zeros(s, rg);
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.normalf();
    return t;
}

Tensor Tensor::uniform(const Shape& s, Rng& rng, float lo, float hi, bool rg) {
    Tensor t = zeros(s, rg);
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

int64_t Tensor::dim(int i) const {
    if (i < 0) i += rank();
    return p_->shape[static_cast<size_t>(i)];
}

float Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return (*p_->data)[0];
}

std::vector<float>& Tensor::grad() {
    if (p_->grad.empty()) p_->grad.assign(static_cast<size_t>(numel()), 0.0f);
    return p_->grad;
}

const std::vector<float>& Tensor::grad() const { return p_->grad; }

void Tensor::zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto p = std::make_shared<TensorImpl>();
    p->shape = p_->shape;
    p->data = std::make_shared<std::vector<float>>(*p_->data);
    return Tensor(p);
}

// ---------------------------------------------------------------------------
// Autograd plumbing

static thread_local bool g_grad_enabled = true;

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

static std::atomic<uint64_t> g_node_ids{1};

// During a backward pass, interior nodes get transient gradient buffers here;
// only leaves (requires_grad, no node) accumulate into their persistent grad.
struct BackwardCtx {
    std::unordered_map<TensorImpl*, std::vector<float>> tmp;
};
static thread_local BackwardCtx* g_bctx = nullptr;

using BackFn = std::function<void(const float* gout, TensorImpl& out)>;

struct NodeRec : AutogradNode {
    std::weak_ptr<TensorImpl> self;
    BackFn fn;
};

static bool any_needs_grad(const std::vector<Tensor>& parents) {
    if (!g_grad_enabled) return false;
    for (const auto& p : parents)
        if (p.impl()->needs_grad()) return true;
    return false;
}

static void attach(Tensor& out, const std::vector<Tensor>& parents, BackFn fn) {
    if (!any_needs_grad(parents)) return;
    auto node = std::make_shared<NodeRec>();
    node->id = g_node_ids.fetch_add(1);
    for (const auto& p : parents) node->parents.push_back(p.impl());
    node->fn = std::move(fn);
    node->self = out.impl();
    node->backward = {};
    out.impl()->node = node;
}

// Accumulation buffer for t, or nullptr if gradients do not flow into it.
static float* sink(TensorImpl& t) {
    if (!t.needs_grad()) return nullptr;
    if (t.requires_grad && !t.node) {
        if (t.grad.empty()) t.grad.assign(static_cast<size_t>(t.numel()), 0.0f);
        return t.grad.data();
    }
    auto& buf = g_bctx->tmp[&t];
    if (buf.empty()) buf.assign(static_cast<size_t>(t.numel()), 0.0f);
    return buf.data();
}

static void accum(TensorImpl& t, const float* g) {
    float* dst = sink(t);
    if (!dst) return;
    int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw UsageError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    auto root = loss.impl();
    if (!root->node) {
        if (root->requires_grad) {
            if (root->grad.empty()) root->grad.assign(1, 0.0f);
            root->grad[0] += 1.0f;
        }
        return;
    }

    // Reachable nodes, processed in decreasing id order (valid reverse topo
    // order since parents are always created before children).
    std::vector<NodeRec*> order;
    std::unordered_set<AutogradNode*> seen;
    std::vector<AutogradNode*> stack{root->node.get()};
    seen.insert(root->node.get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        order.push_back(static_cast<NodeRec*>(n));
        for (auto& p : n->parents)
            if (p->node && seen.insert(p->node.get()).second) stack.push_back(p->node.get());
    }
    std::sort(order.begin(), order.end(), [](NodeRec* a, NodeRec* b) { return a->id > b->id; });

    BackwardCtx ctx;
    g_bctx = &ctx;
    ctx.tmp[root.get()] = {1.0f};
    for (NodeRec* n : order) {
        auto out = n->self.lock();
        if (!out) continue;
        auto it = ctx.tmp.find(out.get());
        if (it == ctx.tmp.end()) continue;  // dead branch
        n->fn(it->second.data(), *out);
    }
    g_bctx = nullptr;
}

Tensor custom_op(const std::vector<Tensor>& parents, const Shape& out_shape,
                 std::vector<float> out_values,
                 std::function<void(const float* gout, const CustomAccumFn& accum)> backward_fn) {
    Tensor out = Tensor::from(out_shape, std::move(out_values));
    std::vector<Tensor> held = parents;
    attach(out, parents, [held, backward_fn](const float* g, TensorImpl&) {
        CustomAccumFn acc = [&held](size_t idx, const float* grad) {
            auto impl = held.at(idx).impl();
            if (impl->needs_grad()) accum(*impl, grad);
        };
        backward_fn(g, acc);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Broadcasting

static Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` aligned to a broadcast result of rank r; 0 where broadcast.
static std::vector<int64_t> bcast_strides(const Shape& s, size_t r) {
    std::vector<int64_t> st(r, 0);
    auto own = strides_of(s);
    size_t off = r - s.size();
    for (size_t i = 0; i < s.size(); ++i) st[off + i] = (s[i] == 1) ? 0 : own[i];
    return st;
}

template <class F>
static void odometer(const Shape& out, const std::vector<int64_t>& as, const std::vector<int64_t>& bs,
                     F&& f) {
    int r = static_cast<int>(out.size());
    int64_t total = numel_of(out);
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t ao = 0, bo = 0;
    for (int64_t c = 0; c < total; ++c) {
        f(c, ao, bo);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            ao += as[d];
            bo += bs[d];
            if (idx[d] < out[d]) break;
            ao -= as[d] * out[d];
            bo -= bs[d] * out[d];
            idx[d] = 0;
        }
    }
}

// Sum g (shaped `out`) down to `target`, for broadcast backward.
static std::vector<float> reduce_grad_to(const float* g, const Shape& out, const Shape& target) {
    std::vector<float> r(static_cast<size_t>(numel_of(target)), 0.0f);
    auto ts = bcast_strides(target, out.size());
    odometer(out, ts, ts, [&](int64_t c, int64_t to, int64_t) { r[static_cast<size_t>(to)] += g[c]; });
    return r;
}

enum class BinOp { Add, Sub, Mul, Div };

static Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out = Tensor::zeros(os);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    int64_t n = out.numel();

    auto apply = [op](float x, float y) {
        switch (op) {
            case BinOp::Add: return x + y;
            case BinOp::Sub: return x - y;
            case BinOp::Mul: return x * y;
            default: return x / y;
        }
    };

    if (a.shape() == b.shape()) {
        switch (op) {
            case BinOp::Add:
                for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
                break;
            case BinOp::Sub:
                for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
                break;
            case BinOp::Mul:
                for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
                break;
            default:
                for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
        }
    } else {
        auto as = bcast_strides(a.shape(), os.size());
        auto bs = bcast_strides(b.shape(), os.size());
        odometer(os, as, bs,
                 [&](int64_t c, int64_t ao, int64_t bo) { po[c] = apply(pa[ao], pb[bo]); });
    }

    Tensor ta = a, tb = b;
    attach(out, {a, b}, [ta, tb, op, os](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        auto ib = tb.impl();
        int64_t n = numel_of(os);
        const float* pa = ia->data->data();
        const float* pb = ib->data->data();
        if (ia->needs_grad()) {
            std::vector<float> ga(static_cast<size_t>(n));
            switch (op) {
                case BinOp::Add:
                case BinOp::Sub:
                    std::memcpy(ga.data(), g, static_cast<size_t>(n) * sizeof(float));
                    break;
                case BinOp::Mul: {
                    auto bs = bcast_strides(ib->shape, os.size());
                    odometer(os, bs, bs, [&](int64_t c, int64_t bo, int64_t) { ga[c] = g[c] * pb[bo]; });
                    break;
                }
                case BinOp::Div: {
                    auto bs = bcast_strides(ib->shape, os.size());
                    odometer(os, bs, bs, [&](int64_t c, int64_t bo, int64_t) { ga[c] = g[c] / pb[bo]; });
                    break;
                }
            }
            if (ia->shape == os) {
                accum(*ia, ga.data());
            } else {
                auto r = reduce_grad_to(ga.data(), os, ia->shape);
                accum(*ia, r.data());
            }
        }
        if (ib->needs_grad()) {
            std::vector<float> gb(static_cast<size_t>(n));
            auto as = bcast_strides(ia->shape, os.size());
            auto bs = bcast_strides(ib->shape, os.size());
            switch (op) {
                case BinOp::Add:
                    std::memcpy(gb.data(), g, static_cast<size_t>(n) * sizeof(float));
                    break;
                case BinOp::Sub:
                    for (int64_t i = 0; i < n; ++i) gb[i] = -g[i];
                    break;
                case BinOp::Mul:
                    odometer(os, as, as, [&](int64_t c, int64_t ao, int64_t) { gb[c] = g[c] * pa[ao]; });
                    break;
                case BinOp::Div:
                    odometer(os, as, bs, [&](int64_t c, int64_t ao, int64_t bo) {
                        float bv = pb[bo];
                        gb[c] = -g[c] * pa[ao] / (bv * bv);
                    });
                    break;
            }
            if (ib->shape == os) {
                accum(*ib, gb.data());
            } else {
                auto r = reduce_grad_to(gb.data(), os, ib->shape);
                accum(*ib, r.data());
            }
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div); }

static Tensor unary_op(const Tensor& a, std::function<float(float)> f,
                       std::function<float(float, float)> dfdx_of_x_y) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
    Tensor ta = a;
    attach(out, {a}, [ta, dfdx_of_x_y](const float* g, TensorImpl& out) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        int64_t n = ia->numel();
        const float* pa = ia->data->data();
        const float* py = out.data->data();
        std::vector<float> ga(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) ga[i] = g[i] * dfdx_of_x_y(pa[i], py[i]);
        accum(*ia, ga.data());
    });
    return out;
}

Tensor add(const Tensor& a, float s) {
    return unary_op(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor mul(const Tensor& a, float s) {
    return unary_op(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0f); }

static float sigmoidf_(float x) { return x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x)); }

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, sigmoidf_, [](float, float y) { return y * (1.0f - y); });
}

Tensor silu(const Tensor& a) {
    return unary_op(a, [](float x) { return x * sigmoidf_(x); },
                    [](float x, float) {
                        float s = sigmoidf_(x);
                        return s * (1.0f + x * (1.0f - s));
                    });
}

Tensor softplus(const Tensor& a) {
    return unary_op(a, [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
                    [](float x, float) { return sigmoidf_(x); });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    return unary_op(a, [lo, hi](float x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------------------
// Structure ops

Tensor reshape(const Tensor& a, const Shape& s) {
    if (numel_of(s) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(s) + ": element count differs");
    auto p = std::make_shared<TensorImpl>();
    p->shape = s;
    p->data = a.impl()->data;  // alias
    Tensor out(p);
    Tensor ta = a;
    attach(out, {a}, [ta](const float* g, TensorImpl&) { accum(*ta.impl(), g); });
    return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    int r = a.rank();
    if (static_cast<int>(axes.size()) != r) throw ShapeError("permute axes rank mismatch");
    Shape os(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = a.shape()[static_cast<size_t>(axes[i])];
    Tensor out = Tensor::zeros(os);
    auto ost = strides_of(os);
    // stride in the output for each input axis
    std::vector<int64_t> out_stride_of_in(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_stride_of_in[static_cast<size_t>(axes[i])] = ost[static_cast<size_t>(i)];
    const Shape& is = a.shape();
    const float* pa = a.data();
    float* po = out.data();
    odometer(is, out_stride_of_in, out_stride_of_in,
             [&](int64_t c, int64_t oo, int64_t) { po[oo] = pa[c]; });
    Tensor ta = a;
    attach(out, {a}, [ta, out_stride_of_in](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        std::vector<float> ga(static_cast<size_t>(ia->numel()));
        odometer(ia->shape, out_stride_of_in, out_stride_of_in,
                 [&](int64_t c, int64_t oo, int64_t) { ga[c] = g[oo]; });
        accum(*ia, ga.data());
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat of zero tensors");
    int r = parts[0].rank();
    if (axis < 0) axis += r;
    Shape os = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && p.shape()[static_cast<size_t>(d)] != os[static_cast<size_t>(d)])
                throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(os));
        total += p.dim(axis);
    }
    os[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::zeros(os);

    int64_t inner = 1;
    for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<size_t>(d)];
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];

    float* po = out.data();
    int64_t axis_off = 0;
    for (const auto& p : parts) {
        int64_t len = p.dim(axis);
        const float* pp = p.data();
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + (o * total + axis_off) * inner, pp + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(float));
        }
        axis_off += len;
    }

    std::vector<Tensor> held = parts;
    attach(out, parts, [held, axis, total, inner, outer](const float* g, TensorImpl&) {
        int64_t axis_off = 0;
        for (const auto& p : held) {
            auto ip = p.impl();
            int64_t len = ip->shape[static_cast<size_t>(axis)];
            if (ip->needs_grad()) {
                std::vector<float> gp(static_cast<size_t>(ip->numel()));
                for (int64_t o = 0; o < outer; ++o)
                    std::memcpy(gp.data() + o * len * inner, g + (o * total + axis_off) * inner,
                                static_cast<size_t>(len * inner) * sizeof(float));
                accum(*ip, gp.data());
            }
            axis_off += len;
        }
    });
    return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    int r = a.rank();
    if (axis < 0) axis += r;
    int64_t extent = a.dim(axis);
    if (start < 0 || len < 0 || start + len > extent)
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis extent " + std::to_string(extent));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = len;
    Tensor out = Tensor::zeros(os);
    int64_t inner = 1;
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[static_cast<size_t>(d)];
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape()[static_cast<size_t>(d)];
    const float* pa = a.data();
    float* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(po + o * len * inner, pa + (o * extent + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(float));
    Tensor ta = a;
    attach(out, {a}, [ta, axis, start, len, inner, outer, extent](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        std::vector<float> ga(static_cast<size_t>(ia->numel()), 0.0f);
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(ga.data() + (o * extent + start) * inner, g + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(float));
        accum(*ia, ga.data());
    });
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2x expects [B,C,H,W], got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = Tensor::zeros({B, C, 2 * H, 2 * W});
    const float* px = x.data();
    float* po = out.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const float* in = px + bc * H * W;
        float* o = po + bc * 4 * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                float v = in[i * W + j];
                int64_t r0 = (2 * i) * 2 * W + 2 * j;
                o[r0] = v;
                o[r0 + 1] = v;
                o[r0 + 2 * W] = v;
                o[r0 + 2 * W + 1] = v;
            }
    }
    Tensor tx = x;
    attach(out, {x}, [tx, B, C, H, W](const float* g, TensorImpl&) {
        auto ix = tx.impl();
        if (!ix->needs_grad()) return;
        std::vector<float> gx(static_cast<size_t>(ix->numel()));
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const float* go = g + bc * 4 * H * W;
            float* gi = gx.data() + bc * H * W;
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    int64_t r0 = (2 * i) * 2 * W + 2 * j;
                    gi[i * W + j] = go[r0] + go[r0 + 1] + go[r0 + 2 * W] + go[r0 + 2 * W + 1];
                }
        }
        accum(*ix, gx.data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major; i-k-j ordering so the inner loop vectorizes with
// independent accumulators (no float reassociation required).

static void gemm_nn(float* C, const float* A, const float* B, int64_t M, int64_t K, int64_t N,
                    bool acc) {
    if (!acc)
        for (int64_t i = 0; i < M * N; ++i) C[i] = 0.0f;
    for (int64_t i = 0; i < M; ++i) {
        const float* a = A + i * K;
        float* c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            float av = a[k];
            const float* b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
static void gemm_nt(float* C, const float* A, const float* B, int64_t M, int64_t K, int64_t N,
                    bool acc) {
    for (int64_t i = 0; i < M; ++i) {
        const float* a = A + i * K;
        for (int64_t j = 0; j < N; ++j) {
            const float* b = B + j * K;
            float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int64_t k = 0;
            for (; k + 4 <= K; k += 4) {
                s0 += a[k] * b[k];
                s1 += a[k + 1] * b[k + 1];
                s2 += a[k + 2] * b[k + 2];
                s3 += a[k + 3] * b[k + 3];
            }
            float s = (s0 + s1) + (s2 + s3);
            for (; k < K; ++k) s += a[k] * b[k];
            if (acc)
                C[i * N + j] += s;
            else
                C[i * N + j] = s;
        }
    }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
static void gemm_tn(float* C, const float* A, const float* B, int64_t M, int64_t K, int64_t N,
                    bool acc) {
    if (!acc)
        for (int64_t i = 0; i < M * N; ++i) C[i] = 0.0f;
    for (int64_t k = 0; k < K; ++k) {
        const float* a = A + k * M;
        const float* b = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            float av = a[i];
            float* c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul needs rank >= 2: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t m = a.dim(-2), ka = a.dim(-1);
    int64_t kb = b.dim(-2), n = b.dim(-1);
    if (ka != kb)
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    Shape obatch = broadcast_shape(abatch, bbatch);
    Shape os = obatch;
    os.push_back(m);
    os.push_back(n);
    Tensor out = Tensor::zeros(os);

    // batch strides in units of one matrix (0 where broadcast)
    auto as = bcast_strides(abatch, obatch.size());
    auto bs = bcast_strides(bbatch, obatch.size());
    for (auto& v : as) v *= m * ka;
    for (auto& v : bs) v *= ka * n;

    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    odometer(obatch, as, bs, [&](int64_t c, int64_t ao, int64_t bo) {
        gemm_nn(po + c * m * n, pa + ao, pb + bo, m, ka, n, false);
    });

    Tensor ta = a, tb = b;
    attach(out, {a, b}, [ta, tb, obatch, as, bs, m, ka, n](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        auto ib = tb.impl();
        const float* pa = ia->data->data();
        const float* pb = ib->data->data();
        std::vector<float> ga, gb;
        if (ia->needs_grad()) ga.assign(static_cast<size_t>(ia->numel()), 0.0f);
        if (ib->needs_grad()) gb.assign(static_cast<size_t>(ib->numel()), 0.0f);
        odometer(obatch, as, bs, [&](int64_t c, int64_t ao, int64_t bo) {
            const float* gout = g + c * m * n;
            // dA[m,ka] = dC[m,n] * B[ka,n]^T ; dB[ka,n] = A[m,ka]^T * dC[m,n]
            if (!ga.empty()) gemm_nt(ga.data() + ao, gout, pb + bo, m, n, ka, true);
            if (!gb.empty()) gemm_tn(gb.data() + bo, pa + ao, gout, ka, m, n, true);
        });
        if (!ga.empty()) accum(*ia, ga.data());
        if (!gb.empty()) accum(*ib, gb.data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    const float* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
    Tensor out = Tensor::from({1}, {static_cast<float>(acc)});
    Tensor ta = a;
    attach(out, {a}, [ta](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        std::vector<float> ga(static_cast<size_t>(ia->numel()), g[0]);
        accum(*ia, ga.data());
    });
    return out;
}

Tensor mean_all(const Tensor& a) { return mul(sum_all(a), 1.0f / static_cast<float>(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis, bool keepdim) {
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("sum_axis: bad axis");
    int64_t L = a.dim(axis);
    int64_t inner = 1;
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[static_cast<size_t>(d)];
    int64_t outer = a.numel() / (L * inner);
    Shape os;
    for (int d = 0; d < r; ++d) {
        if (d == axis) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.shape()[static_cast<size_t>(d)]);
        }
    }
    if (os.empty()) os.push_back(1);
    Tensor out = Tensor::zeros(os);
    const float* pa = a.data();
    float* po = out.data();
    std::vector<double> row(static_cast<size_t>(inner));
    for (int64_t o = 0; o < outer; ++o) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int64_t l = 0; l < L; ++l) {
            const float* src = pa + (o * L + l) * inner;
            for (int64_t i = 0; i < inner; ++i) row[static_cast<size_t>(i)] += src[i];
        }
        for (int64_t i = 0; i < inner; ++i) po[o * inner + i] = static_cast<float>(row[static_cast<size_t>(i)]);
    }
    Tensor ta = a;
    attach(out, {a}, [ta, L, inner, outer](const float* g, TensorImpl&) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        std::vector<float> ga(static_cast<size_t>(ia->numel()));
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t l = 0; l < L; ++l)
                std::memcpy(ga.data() + (o * L + l) * inner, g + o * inner,
                            static_cast<size_t>(inner) * sizeof(float));
        accum(*ia, ga.data());
    });
    return out;
}

Tensor mean_axis(const Tensor& a, int axis, bool keepdim) {
    int r = a.rank();
    int ax = axis < 0 ? axis + r : axis;
    return mul(sum_axis(a, axis, keepdim), 1.0f / static_cast<float>(a.shape()[static_cast<size_t>(ax)]));
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& a, int axis) {
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("softmax: bad axis");
    int64_t L = a.dim(axis);
    int64_t inner = 1;
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[static_cast<size_t>(d)];
    int64_t outer = a.numel() / (L * inner);
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const float* x = pa + o * L * inner + i;
            float* y = po + o * L * inner + i;
            float mx = -std::numeric_limits<float>::infinity();
            for (int64_t l = 0; l < L; ++l) {
                float v = x[l * inner];
                if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
                mx = std::max(mx, v);
            }
            double Z = 0.0;
            for (int64_t l = 0; l < L; ++l) {
                float e = std::exp(x[l * inner] - mx);
                y[l * inner] = e;
                Z += e;
            }
            float invZ = static_cast<float>(1.0 / Z);
            for (int64_t l = 0; l < L; ++l) y[l * inner] *= invZ;
        }
    }
    Tensor ta = a;
    attach(out, {a}, [ta, L, inner, outer](const float* g, TensorImpl& o) {
        auto ia = ta.impl();
        if (!ia->needs_grad()) return;
        const float* py = o.data->data();
        std::vector<float> ga(static_cast<size_t>(ia->numel()));
        for (int64_t ou = 0; ou < outer; ++ou) {
            for (int64_t i = 0; i < inner; ++i) {
                int64_t base = ou * L * inner + i;
                double dot = 0.0;
                for (int64_t l = 0; l < L; ++l) dot += static_cast<double>(g[base + l * inner]) * py[base + l * inner];
                float fd = static_cast<float>(dot);
                for (int64_t l = 0; l < L; ++l)
                    ga[base + l * inner] = py[base + l * inner] * (g[base + l * inner] - fd);
            }
        }
        accum(*ia, ga.data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// conv2d via im2col

static void im2col(const float* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                float* dst = col + ((c * kh + ki) * kw + kj) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst + oh * OW, dst + (oh + 1) * OW, 0.0f);
                        continue;
                    }
                    const float* src = x + (c * H + ih) * W;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        dst[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

static void col2im_accum(const float* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                         int64_t stride, int64_t pad, int64_t OH, int64_t OW, float* x) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const float* src = col + ((c * kh + ki) * kw + kj) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    float* dst = x + (c * H + ih) * W;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) dst[iw] += src[oh * OW + ow];
                    }
                }
            }
        }
    }
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d expects x [B,C,H,W], w [Cout,Cin,kh,kw]: got " + shape_str(x.shape()) +
                         ", " + shape_str(w.shape()));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Cout = w.dim(0), Cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (C != Cin)
        throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw ShapeError("conv2d kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " with pad " + std::to_string(pad));
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    int64_t OH = (H + 2 * pad - kh) / stride + 1;
    int64_t OW = (W + 2 * pad - kw) / stride + 1;
    Tensor out = Tensor::zeros({B, Cout, OH, OW});

    int64_t K = Cin * kh * kw;
    std::vector<float> col(static_cast<size_t>(K * OH * OW));
    const float* px = x.data();
    const float* pw = w.data();
    float* po = out.data();
    for (int64_t b = 0; b < B; ++b) {
        im2col(px + b * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
        gemm_nn(po + b * Cout * OH * OW, pw, col.data(), Cout, K, OH * OW, false);
    }

    Tensor tx = x, tw = w;
    attach(out, {x, w}, [tx, tw, B, C, H, W, Cout, kh, kw, stride, pad, OH, OW, K](const float* g,
                                                                                   TensorImpl&) {
        auto ix = tx.impl();
        auto iw = tw.impl();
        const float* px = ix->data->data();
        const float* pw = iw->data->data();
        std::vector<float> col(static_cast<size_t>(K * OH * OW));
        std::vector<float> gx, gw, gcol;
        if (ix->needs_grad()) gx.assign(static_cast<size_t>(ix->numel()), 0.0f);
        if (iw->needs_grad()) gw.assign(static_cast<size_t>(iw->numel()), 0.0f);
        if (ix->needs_grad()) gcol.assign(static_cast<size_t>(K * OH * OW), 0.0f);
        for (int64_t b = 0; b < B; ++b) {
            const float* gout = g + b * Cout * OH * OW;
            if (!gw.empty()) {
                im2col(px + b * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
                // dW[Cout,K] += gout[Cout,OHW] * col[K,OHW]^T
                gemm_nt(gw.data(), gout, col.data(), Cout, OH * OW, K, true);
            }
            if (!gx.empty()) {
                // dcol[K,OHW] = W[Cout,K]^T * gout[Cout,OHW]
                gemm_tn(gcol.data(), pw, gout, K, Cout, OH * OW, false);
                col2im_accum(gcol.data(), C, H, W, kh, kw, stride, pad, OH, OW, gx.data() + b * C * H * W);
            }
        }
        if (!gx.empty()) accum(*ix, gx.data());
        if (!gw.empty()) accum(*iw, gw.data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// GroupNorm

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.rank() != 4) throw ShapeError("group_norm expects [B,C,H,W], got " + shape_str(x.shape()));
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % groups != 0)
        throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                         std::to_string(groups));
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("group_norm: affine parameters must have shape [C]");
    int64_t cg = C / groups;
    int64_t m = cg * H * W;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<float> means(static_cast<size_t>(B * groups)), rstds(static_cast<size_t>(B * groups));
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pb = beta.data();
    float* po = out.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
            const float* base = px + (b * C + g * cg) * H * W;
            double s = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                s += base[i];
                s2 += static_cast<double>(base[i]) * base[i];
            }
            double mean = s / m;
            double var = s2 / m - mean * mean;
            if (var < 0) var = 0;
            float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
            means[static_cast<size_t>(b * groups + g)] = static_cast<float>(mean);
            rstds[static_cast<size_t>(b * groups + g)] = rstd;
            float* o = po + (b * C + g * cg) * H * W;
            for (int64_t c = 0; c < cg; ++c) {
                float ga = pg[g * cg + c];
                float be = pb[g * cg + c];
                const float* xi = base + c * H * W;
                float* oi = o + c * H * W;
                float mu = static_cast<float>(mean);
                for (int64_t i = 0; i < H * W; ++i) oi[i] = (xi[i] - mu) * rstd * ga + be;
            }
        }
    }

    Tensor tx = x, tg = gamma, tb = beta;
    attach(out, {x, gamma, beta},
           [tx, tg, tb, B, C, H, W, groups, cg, m, means, rstds](const float* g, TensorImpl&) {
               auto ix = tx.impl();
               auto ig = tg.impl();
               auto ib = tb.impl();
               const float* px = ix->data->data();
               const float* pg = ig->data->data();
               std::vector<float> gx, gg, gb;
               if (ix->needs_grad()) gx.assign(static_cast<size_t>(ix->numel()), 0.0f);
               if (ig->needs_grad()) gg.assign(static_cast<size_t>(C), 0.0f);
               if (ib->needs_grad()) gb.assign(static_cast<size_t>(C), 0.0f);
               int64_t HW = H * W;
               for (int64_t b = 0; b < B; ++b) {
                   for (int64_t gr = 0; gr < groups; ++gr) {
                       const float* xb = px + (b * C + gr * cg) * HW;
                       const float* gy = g + (b * C + gr * cg) * HW;
                       float mu = means[static_cast<size_t>(b * groups + gr)];
                       float rstd = rstds[static_cast<size_t>(b * groups + gr)];
                       // accumulate group statistics of dxhat
                       double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                       for (int64_t c = 0; c < cg; ++c) {
                           float ga = pg[gr * cg + c];
                           const float* xi = xb + c * HW;
                           const float* gi = gy + c * HW;
                           for (int64_t i = 0; i < HW; ++i) {
                               float xh = (xi[i] - mu) * rstd;
                               float dxh = gi[i] * ga;
                               sum_dxhat += dxh;
                               sum_dxhat_xhat += static_cast<double>(dxh) * xh;
                           }
                       }
                       float mean_dxhat = static_cast<float>(sum_dxhat / m);
                       float mean_dxhat_xhat = static_cast<float>(sum_dxhat_xhat / m);
                       for (int64_t c = 0; c < cg; ++c) {
                           float ga = pg[gr * cg + c];
                           const float* xi = xb + c * HW;
                           const float* gi = gy + c * HW;
                           if (!gg.empty() || !gb.empty()) {
                               double dgam = 0.0, dbet = 0.0;
                               for (int64_t i = 0; i < HW; ++i) {
                                   float xh = (xi[i] - mu) * rstd;
                                   dgam += static_cast<double>(gi[i]) * xh;
                                   dbet += gi[i];
                               }
                               if (!gg.empty()) gg[static_cast<size_t>(gr * cg + c)] += static_cast<float>(dgam);
                               if (!gb.empty()) gb[static_cast<size_t>(gr * cg + c)] += static_cast<float>(dbet);
                           }
                           if (!gx.empty()) {
                               float* go = gx.data() + (b * C + gr * cg + c) * HW;
                               for (int64_t i = 0; i < HW; ++i) {
                                   float xh = (xi[i] - mu) * rstd;
                                   float dxh = gi[i] * ga;
                                   go[i] = rstd * (dxh - mean_dxhat - xh * mean_dxhat_xhat);
                               }
                           }
                       }
                   }
               }
               if (!gx.empty()) accum(*ix, gx.data());
               if (!gg.empty()) accum(*ig, gg.data());
               if (!gb.empty()) accum(*ib, gb.data());
           });
    return out;
}

}  // namespace c123
