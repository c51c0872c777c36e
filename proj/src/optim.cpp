#include "c123/optim.hpp"

#include <cmath>

#include "c123/errors.hpp"

namespace c123 {

AdamW::AdamW(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
}

void AdamW::step() {
    ++step_;
    float b1 = opt_.beta1, b2 = opt_.beta2;
    float bc1 = 1.0f - std::pow(b1, static_cast<float>(step_));
    float bc2 = 1.0f - std::pow(b2, static_cast<float>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad())
            throw UsageError("AdamW::step: parameter " + std::to_string(i) + " has no gradient");
        float* w = p.data();
        const float* g = p.grad().data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        int64_t n = p.numel();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            float mhat = m[j] / bc1;
            float vhat = v[j] / bc2;
            w[j] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * w[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) {
        p.grad();  // allocate if absent; params untouched by backward have zero gradient
        p.zero_grad();
    }
}

}  // namespace c123
