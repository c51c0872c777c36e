#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c123/camera.hpp"
#include "c123/image.hpp"
#include "c123/model.hpp"
#include "c123/optim.hpp"
#include "c123/tensor.hpp"

namespace c123 {

// Linear-beta schedule over T training steps; alpha_bar[0] == 1 by convention.
struct NoiseSchedule {
    int T = 1000;
    std::vector<float> beta;       // index 1..T, beta[0] unused
    std::vector<float> alpha_bar;  // index 0..T
};

NoiseSchedule build_schedule(double beta1 = 1e-4, double betaT = 2e-2, int T = 1000);

// Closed-form forward marginal: x^t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

// ---------------------------------------------------------------------------
// Guidance

enum class PcfgKind { Constant, Linear, Concave, Convex };
PcfgKind pcfg_from_string(const std::string& s);
std::string to_string(PcfgKind k);

struct PCFGSchedule {
    PcfgKind kind = PcfgKind::Concave;
    double w_s = 10.0;
    double w_e = 2.0;
    int T_sample = 50;
};

// Guidance scale at sampler step t (counted from the start of denoising,
// 0 = most noisy). linear: (w_e-w_s)t/T + w_s; concave: (w_e-w_s)t^2/T^2 + w_s;
// convex: w_s/t + w_e, defined for t >= 1. constant: w_s.
double pcfg_weight(int t, const PCFGSchedule& s);

// (1+w) eps_cond - w eps_uncond
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
    int steps = 50;
    double eta = 0.0;  // DDIM stochasticity; 0 keeps sampling deterministic
    int n_sample = 4;
    PCFGSchedule pcfg;
    uint64_t seed = 0;
    ForwardOptions fwd;
    bool plain_cfg = false;  // fixed scale pcfg.w_s every step, no schedule
};

// Jointly denoises n = rel_poses.size() views from seeded Gaussian latents
// and decodes to [0,1] images. Deterministic per seed when eta == 0. If
// `init_noise` is provided (shape [n,3,H,W]) it replaces the seeded draw.
std::vector<Image> ddim_sample(const UNet& model, const Image& cond_image,
                               const std::vector<RelativePose>& rel_poses,
                               const SamplerConfig& cfg, const NoiseSchedule& schedule,
                               const Tensor* init_noise = nullptr);

// Round-based sampling for long sequences: the first chunk conditions on the
// input view; every later chunk conditions on the nearest already-synthesized
// view with poses re-based onto it.
struct ChunkPlan {
    struct Chunk {
        int cond_index = -1;  // index into targets of the new condition view; -1 = input view
        std::vector<int> targets;
        std::vector<RelativePose> rel;  // relative to the chunk's condition pose
    };
    std::vector<Chunk> chunks;
};

ChunkPlan plan_chunks(const SphericalPose& cond_pose, const std::vector<SphericalPose>& targets,
                      int chunk_size);

std::vector<Image> chunked_sample(const UNet& model, const Image& cond_image,
                                  const SphericalPose& cond_pose,
                                  const std::vector<SphericalPose>& targets, int chunk_size,
                                  const SamplerConfig& cfg, const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Training

struct TrainObject {
    std::vector<Image> images;
    std::vector<SphericalPose> poses;
};
using TrainSet = std::vector<TrainObject>;

struct TrainStepConfig {
    int n_views = 4;      // views per batch item (1 for the base stage)
    int batch_size = 1;   // ViewBatches per optimizer step
    double cond_dropout = 0.1;
};

// One optimizer step of the Eq.-3 noise reconstruction loss: samples
// (object, condition view, target views, t, eps) from `rng`, with the
// condition replaced by the learned null with probability cond_dropout.
// Returns the scalar loss.
float training_step(UNet& model, AdamW& opt, const TrainSet& data, const NoiseSchedule& schedule,
                    const TrainStepConfig& cfg, Rng& rng);

// model-space helpers: images live in [0,1], latents in [-1,1]
Tensor image_to_model(const Image& img);
Image model_to_image(const Tensor& t);  // clamps to [0,1]

}  // namespace c123
