#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c123/camera.hpp"
#include "c123/checkpoint.hpp"
#include "c123/tensor.hpp"

namespace c123 {

// Where the shared self-attention (all view streams querying the condition
// stream's keys/values) is active. Encoder means the down path, Decoder the
// up path, Whole adds the bottleneck as well.
enum class SsaPlacement { Off, Encoder, Decoder, Whole };

SsaPlacement ssa_from_string(const std::string& s);
std::string to_string(SsaPlacement p);

enum class ParamGroup { All, Base, CrossViewOnly };

struct UNetConfig {
    int resolution = 32;
    int base_channels = 32;
    std::vector<int> channel_mults = {1, 2, 4};
    std::vector<int> attn_levels = {1, 2};
    int embed_dim = 128;  // width of the condition embedding token
    int heads = 4;
    int norm_groups = 8;
    SsaPlacement ssa = SsaPlacement::Decoder;
    bool cross_view = true;

    void validate() const;
    bool level_has_attn(int level) const;
};

// One unit of joint denoising: n noisy view latents (model space, [-1,1]),
// the condition image, per-view pose deltas, and a shared timestep.
struct ViewBatch {
    Tensor noisy;                        // [n, 3, H, W]
    Tensor cond_image;                   // [3, H, W]
    std::vector<RelativePose> rel_poses; // length n
    int timestep = 1;                    // in [1, 1000]
};

class UNetImpl;

// Runtime ablation switches for a forward pass (sampling-time ablations).
// Shared self-attention carries no parameters of its own, so its placement
// can be overridden at inference without retraining.
struct ForwardOptions {
    bool use_cross_view = true;
    bool use_ssa = true;
    std::optional<SsaPlacement> ssa_override;
};

// Pose-conditioned multi-view denoiser. The condition image is concatenated
// onto each noisy view channel-wise and additionally processed as an extra
// stream whose self-attention keys/values are shared with every view (per the
// SSA placement). The condition embedding (small conv encoder + pose delta)
// is injected through cross-attention at every attention level. Cross-view
// attention couples all streams at matching spatial tokens and is the only
// parameter group that is new relative to the single-view base model; its
// output projections start at zero, so a freshly extended model is an exact
// function-match of its base.
class UNet {
  public:
    UNet(const UNetConfig& cfg, uint64_t init_seed);
    ~UNet();
    UNet(UNet&&) noexcept;
    UNet& operator=(UNet&&) noexcept;

    const UNetConfig& config() const;

    // One noise map per view: [n, 3, H, W]. drop_condition replaces the
    // condition (embedding, concat channels and condition stream) with the
    // learned null condition -- the unconditional branch of CFG.
    Tensor predict_noise(const ViewBatch& batch, bool drop_condition = false,
                         const ForwardOptions& opts = {}) const;

    // One embedding row per pose: [n, embed_dim].
    Tensor encode_condition(const Tensor& cond_image, const std::vector<RelativePose>& rel_poses,
                            bool drop_condition = false) const;

    // Parameter partition: names are prefixed "base." / "xview.". The two
    // groups are disjoint and together cover everything.
    NamedTensors parameters(ParamGroup group = ParamGroup::All) const;
    // Sets requires_grad so only the chosen group accumulates gradients.
    void set_trainable(ParamGroup group);

    void load_parameters(const NamedTensors& named);

    void save(const std::string& path) const;
    static UNet load(const std::string& path);

    // Copy of `base` with cross-view attention layers added (zero-initialized
    // output projections): the frozen-base extension protocol.
    static UNet extend_with_cross_view(const UNet& base, uint64_t init_seed);

  private:
    void load_parameters_partial_base(const NamedTensors& named);

    std::unique_ptr<UNetImpl> impl_;
};

}  // namespace c123
