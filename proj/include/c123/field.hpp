#pragma once

#include <array>
#include <string>
#include <vector>

#include "c123/camera.hpp"
#include "c123/image.hpp"
#include "c123/tensor.hpp"

namespace c123 {

// Dense voxel radiance field over [-1,1]^3. Density is stored pre-softplus
// and color pre-sigmoid; both grids are leaf tensors so the fit runs through
// the ordinary optimizer.
struct RadianceField {
    int res = 48;
    Tensor density;  // [res,res,res]
    Tensor rgb;      // [res,res,res,3]

    explicit RadianceField(int res_);
};

struct RenderOptions {
    int n_samples = 64;
    // stratified jitter key; 0 renders at bin midpoints (deterministic)
    uint64_t jitter_key = 0;
};

// Transmittance-weighted color accumulation with white-background
// compositing, differentiable w.r.t. both grids: returns [n_rays, 3].
Tensor volume_render_rays(const RadianceField& field, const std::vector<Ray>& rays,
                          const RenderOptions& opts = {});

// Single-ray convenience wrapper (no gradient).
std::array<float, 3> volume_render(const RadianceField& field, const Ray& ray, int n_samples);

// Sum of squared forward differences of the density grid (all three axes),
// normalized by element count. Differentiable.
Tensor density_tv_loss(const RadianceField& field);

struct FitOptions {
    int iterations = 2000;
    float lr = 0.05f;
    int ray_batch = 1024;
    float tv_weight = 1e-4f;
    int n_samples = 64;
    int field_res = 48;
    uint64_t seed = 0;
};

// Fits the field to the given posed views by AdamW on the voxel grids
// (random ray batches, stratified samples). Deterministic per seed.
RadianceField fit_field(const std::vector<Image>& views, const std::vector<SphericalPose>& poses,
                        double fov_rad, const FitOptions& opts = {});

Image render_field_view(const RadianceField& field, const SphericalPose& pose, int res,
                        double fov_rad, int n_samples = 64);

// 3D consistency score of one view set: hold out every 8th view (by the given
// order), fit the field on the rest, and score the held-out renders.
struct ConsistencyResult {
    double psnr = 0;
    double ssim = 0;
    std::vector<int> heldout;  // indices of the held-out views
    int n_train = 0;
};

ConsistencyResult consistency_score(const std::vector<Image>& views,
                                    const std::vector<SphericalPose>& poses, double fov_rad,
                                    const FitOptions& opts = {});

// Multi-object report consumed by the CLI (CSV with an aggregate row).
struct ConsistencyReport {
    struct Row {
        std::string object_id;
        int n_views = 0;
        double psnr = 0;
        double ssim = 0;
        uint64_t split_seed = 0;
    };
    std::vector<Row> rows;
    double mean_psnr = 0;
    double mean_ssim = 0;
};

ConsistencyReport make_report(std::vector<ConsistencyReport::Row> rows);
// Full frames are scored (white background included); header records this.
void write_report_csv(const std::string& path, const ConsistencyReport& report);

}  // namespace c123
