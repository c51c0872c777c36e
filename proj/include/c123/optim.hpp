#pragma once

#include <vector>

#include "c123/tensor.hpp"

namespace c123 {

// AdamW: Adam with decoupled weight decay. With weight_decay == 0 this is
// exactly Adam. Moment buffers are allocated per parameter at construction;
// the step counter increases by one per step().
class AdamW {
  public:
    struct Options {
        float lr = 1e-4f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
        float weight_decay = 0.0f;
    };

    AdamW(std::vector<Tensor> params, Options opt);

    // One update from the parameters' current grad buffers. Throws UsageError
    // if any parameter has no populated gradient.
    void step();
    void zero_grad();

    int64_t step_count() const { return step_; }
    const Options& options() const { return opt_; }
    Options& options() { return opt_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    Options opt_;
    int64_t step_ = 0;
};

}  // namespace c123
