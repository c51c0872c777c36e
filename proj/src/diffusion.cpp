#include "c123/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "c123/errors.hpp"

namespace c123 {

NoiseSchedule build_schedule(double beta1, double betaT, int T) {
    if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0))
        throw ParamError("build_schedule: need 0 < beta1 <= betaT < 1");
    if (T < 1) throw ParamError("build_schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0f);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0f);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = (T == 1) ? beta1 : beta1 + (betaT - beta1) * (t - 1) / (T - 1);
        s.beta[static_cast<size_t>(t)] = static_cast<float>(b);
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = static_cast<float>(prod);
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (t < 1 || t > s.T)
        throw ParamError("forward_diffuse: t = " + std::to_string(t) + " outside [1," +
                         std::to_string(s.T) + "]");
    if (eps.shape() != x0.shape())
        throw ShapeError("forward_diffuse: eps shape " + shape_str(eps.shape()) +
                         " != x0 shape " + shape_str(x0.shape()));
    float ab = s.alpha_bar[static_cast<size_t>(t)];
    float a = std::sqrt(ab);
    float b = std::sqrt(1.0f - ab);
    return add(mul(x0, a), mul(eps, b));
}

PcfgKind pcfg_from_string(const std::string& s) {
    if (s == "constant") return PcfgKind::Constant;
    if (s == "linear") return PcfgKind::Linear;
    if (s == "concave") return PcfgKind::Concave;
    if (s == "convex") return PcfgKind::Convex;
    throw ParamError("unknown pcfg kind: " + s);
}

std::string to_string(PcfgKind k) {
    switch (k) {
        case PcfgKind::Constant: return "constant";
        case PcfgKind::Linear: return "linear";
        case PcfgKind::Concave: return "concave";
        default: return "convex";
    }
}

double pcfg_weight(int t, const PCFGSchedule& s) {
    double T = static_cast<double>(s.T_sample);
    switch (s.kind) {
        case PcfgKind::Constant:
            return s.w_s;
        case PcfgKind::Linear:
            if (t < 0 || t > s.T_sample)
                throw ParamError("pcfg_weight: t outside [0,T]");
            return (s.w_e - s.w_s) * t / T + s.w_s;
        case PcfgKind::Concave:
            if (t < 0 || t > s.T_sample)
                throw ParamError("pcfg_weight: t outside [0,T]");
            return (s.w_e - s.w_s) * (static_cast<double>(t) * t) / (T * T) + s.w_s;
        default:  // convex is singular at t = 0
            if (t < 1 || t > s.T_sample)
                throw ParamError("pcfg_weight: convex kind requires t in [1,T]");
            return s.w_s / t + s.w_e;
    }
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
    if (eps_cond.shape() != eps_uncond.shape())
        throw ShapeError("cfg_combine: shape mismatch " + shape_str(eps_cond.shape()) + " vs " +
                         shape_str(eps_uncond.shape()));
    float fw = static_cast<float>(w);
    return sub(mul(eps_cond, 1.0f + fw), mul(eps_uncond, fw));
}

Tensor image_to_model(const Image& img) {
    std::vector<float> v(static_cast<size_t>(3) * img.height * img.width);
    // HWC -> CHW, [0,1] -> [-1,1]
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                v[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
                    2.0f * img.px(y, x)[c] - 1.0f;
    return Tensor::from({3, img.height, img.width}, std::move(v));
}

Image model_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("model_to_image expects [3,H,W]");
    int H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
    Image img(H, W);
    const float* d = t.data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = (d[(static_cast<size_t>(c) * H + y) * W + x] + 1.0f) * 0.5f;
                img.px(y, x)[c] = std::clamp(v, 0.0f, 1.0f);
            }
    return img;
}

std::vector<Image> ddim_sample(const UNet& model, const Image& cond_image,
                               const std::vector<RelativePose>& rel_poses,
                               const SamplerConfig& cfg, const NoiseSchedule& schedule,
                               const Tensor* init_noise) {
    if (cfg.steps < 1) throw ParamError("ddim_sample: steps must be >= 1");
    if (rel_poses.empty()) throw ParamError("ddim_sample: need at least one target pose");
    if (schedule.T % cfg.steps != 0)
        throw ParamError("ddim_sample: steps must divide the training schedule length");
    for (const auto& p : rel_poses) {
        double n = p.sin_d_azimuth * p.sin_d_azimuth + p.cos_d_azimuth * p.cos_d_azimuth;
        if (std::fabs(n - 1.0) > 1e-4)
            throw ParamError("ddim_sample: invalid relative pose (sin^2+cos^2 != 1)");
    }
    int64_t n = static_cast<int64_t>(rel_poses.size());
    int res = model.config().resolution;
    if (cond_image.height != res || cond_image.width != res)
        throw ParamError("ddim_sample: condition image resolution " +
                         std::to_string(cond_image.height) + " does not match model " +
                         std::to_string(res));

    NoGradGuard ng;
    Tensor cond = image_to_model(cond_image);
    Rng rng = Rng::derive(cfg.seed, "ddim");
    Tensor x = init_noise ? init_noise->detach() : Tensor::randn({n, 3, res, res}, rng);
    Rng step_rng = Rng::derive(cfg.seed, "ddim.eta");

    int stride = schedule.T / cfg.steps;
    for (int i = 0; i < cfg.steps; ++i) {
        int t = schedule.T - i * stride;
        int t_prev = t - stride;
        double w = cfg.plain_cfg
                       ? cfg.pcfg.w_s
                       : pcfg_weight(cfg.pcfg.kind == PcfgKind::Convex ? std::max(i, 1) : i, cfg.pcfg);

        ViewBatch batch{x, cond, rel_poses, t};
        Tensor eps_c = model.predict_noise(batch, false, cfg.fwd);
        Tensor eps_u = model.predict_noise(batch, true, cfg.fwd);
        Tensor eps = cfg_combine(eps_c, eps_u, w);

        float ab_t = schedule.alpha_bar[static_cast<size_t>(t)];
        float ab_p = schedule.alpha_bar[static_cast<size_t>(t_prev)];
        // x0 estimate, clamped to the data range to keep high guidance stable
        Tensor x0 = clamp(mul(sub(x, mul(eps, std::sqrt(1.0f - ab_t))), 1.0f / std::sqrt(ab_t)),
                          -1.0f, 1.0f);
        double sigma = 0.0;
        if (cfg.eta > 0.0 && t_prev > 0) {
            double a_t = ab_t, a_p = ab_p;
            sigma = cfg.eta * std::sqrt((1 - a_p) / (1 - a_t)) * std::sqrt(1 - a_t / a_p);
        }
        float dir_coef = static_cast<float>(std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma)));
        x = add(mul(x0, std::sqrt(ab_p)), mul(eps, dir_coef));
        if (sigma > 0.0) {
            Tensor z = Tensor::randn(x.shape(), step_rng);
            x = add(x, mul(z, static_cast<float>(sigma)));
        }
    }

    std::vector<Image> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        out.push_back(model_to_image(reshape(slice(x, 0, i, 1), {3, res, res})));
    return out;
}

ChunkPlan plan_chunks(const SphericalPose& cond_pose, const std::vector<SphericalPose>& targets,
                      int chunk_size) {
    if (chunk_size < 2) throw ParamError("plan_chunks: chunk_size must be >= 2");
    ChunkPlan plan;
    size_t pos = 0;
    while (pos < targets.size()) {
        ChunkPlan::Chunk chunk;
        size_t end = std::min(targets.size(), pos + static_cast<size_t>(chunk_size));
        if (pos == 0) {
            chunk.cond_index = -1;
        } else {
            // nearest already-synthesized view to the first target of this chunk
            const SphericalPose& first = targets[pos];
            double best = 1e30;
            for (size_t j = 0; j < pos; ++j) {
                double d = std::fabs(wrap_pi(targets[j].azimuth - first.azimuth)) +
                           std::fabs(targets[j].polar - first.polar);
                if (d < best) {
                    best = d;
                    chunk.cond_index = static_cast<int>(j);
                }
            }
        }
        const SphericalPose& cp =
            chunk.cond_index < 0 ? cond_pose : targets[static_cast<size_t>(chunk.cond_index)];
        for (size_t k = pos; k < end; ++k) {
            chunk.targets.push_back(static_cast<int>(k));
            chunk.rel.push_back(relative_pose(cp, targets[k]));
        }
        plan.chunks.push_back(std::move(chunk));
        pos = end;
    }
    return plan;
}

std::vector<Image> chunked_sample(const UNet& model, const Image& cond_image,
                                  const SphericalPose& cond_pose,
                                  const std::vector<SphericalPose>& targets, int chunk_size,
                                  const SamplerConfig& cfg, const NoiseSchedule& schedule) {
    if (static_cast<size_t>(chunk_size) >= targets.size()) {
        std::vector<RelativePose> rel;
        rel.reserve(targets.size());
        for (const auto& t : targets) rel.push_back(relative_pose(cond_pose, t));
        return ddim_sample(model, cond_image, rel, cfg, schedule);
    }
    ChunkPlan plan = plan_chunks(cond_pose, targets, chunk_size);
    std::vector<Image> out(targets.size());
    for (size_t ci = 0; ci < plan.chunks.size(); ++ci) {
        const auto& chunk = plan.chunks[ci];
        const Image& cimg = chunk.cond_index < 0 ? cond_image : out[static_cast<size_t>(chunk.cond_index)];
        SamplerConfig ccfg = cfg;
        ccfg.seed = Rng::derive(cfg.seed, "chunk", ci).key();
        auto imgs = ddim_sample(model, cimg, chunk.rel, ccfg, schedule);
        for (size_t k = 0; k < chunk.targets.size(); ++k)
            out[static_cast<size_t>(chunk.targets[k])] = std::move(imgs[k]);
    }
    return out;
}

float training_step(UNet& model, AdamW& opt, const TrainSet& data, const NoiseSchedule& schedule,
                    const TrainStepConfig& cfg, Rng& rng) {
    if (data.empty()) throw UsageError("training_step: empty dataset");
    if (cfg.n_views < 1 || cfg.batch_size < 1)
        throw ParamError("training_step: n_views and batch_size must be >= 1");
    opt.zero_grad();

    Tensor total;
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
        const TrainObject& obj = data[rng.uniform_index(data.size())];
        size_t n_avail = obj.images.size();
        size_t cond_idx = rng.uniform_index(n_avail);

        // distinct target views when possible
        std::vector<size_t> pool(n_avail);
        for (size_t i = 0; i < n_avail; ++i) pool[i] = i;
        std::vector<size_t> chosen;
        for (int k = 0; k < cfg.n_views; ++k) {
            if (!pool.empty()) {
                size_t j = rng.uniform_index(pool.size());
                chosen.push_back(pool[j]);
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
            } else {
                chosen.push_back(rng.uniform_index(n_avail));
            }
        }

        int t = 1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.T)));
        bool drop = rng.uniform() < cfg.cond_dropout;

        std::vector<Tensor> noisy_rows, eps_rows;
        ViewBatch batch;
        for (size_t vi : chosen) {
            Tensor x0 = image_to_model(obj.images[vi]);
            Tensor eps = Tensor::randn(x0.shape(), rng);
            Tensor xt = forward_diffuse(x0, t, eps, schedule);
            int res = static_cast<int>(x0.dim(1));
            noisy_rows.push_back(reshape(xt, {1, 3, res, res}));
            eps_rows.push_back(reshape(eps, {1, 3, res, res}));
            batch.rel_poses.push_back(relative_pose(obj.poses[cond_idx], obj.poses[vi]));
        }
        batch.noisy = concat(noisy_rows, 0).detach();
        batch.cond_image = image_to_model(obj.images[cond_idx]);
        batch.timestep = t;

        Tensor target = concat(eps_rows, 0).detach();
        Tensor err = sub(model.predict_noise(batch, drop), target);
        Tensor item_loss = mean_all(mul(err, err));
        total = total.defined() ? add(total, item_loss) : item_loss;
    }
    Tensor loss = mul(total, 1.0f / static_cast<float>(cfg.batch_size));
    backward(loss);
    opt.step();
    return loss.item();
}

}  // namespace c123
