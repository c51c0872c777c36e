#include "c123/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "c123/errors.hpp"
#include "c123/metrics.hpp"
#include "c123/optim.hpp"

namespace c123 {

RadianceField::RadianceField(int res_) : res(res_) {
    if (res < 2) throw ParamError("RadianceField: resolution must be >= 2");
    // slight negative density bias starts the field nearly empty; mid-gray color
    density = Tensor::full({res, res, res}, -1.0f, true);
    rgb = Tensor::zeros({res, res, res, 3}, true);
}

namespace {

struct TrilinearTap {
    int64_t corner[8];
    float weight[8];
};

// p must lie inside [-1,1]^3; vertex-centered grid of extent N per axis.
inline TrilinearTap trilinear(const Vec3& p, int N) {
    double u = (p.x + 1.0) * 0.5 * (N - 1);
    double v = (p.y + 1.0) * 0.5 * (N - 1);
    double w = (p.z + 1.0) * 0.5 * (N - 1);
    int i0 = std::clamp(static_cast<int>(std::floor(u)), 0, N - 2);
    int j0 = std::clamp(static_cast<int>(std::floor(v)), 0, N - 2);
    int k0 = std::clamp(static_cast<int>(std::floor(w)), 0, N - 2);
    float fu = static_cast<float>(std::clamp(u - i0, 0.0, 1.0));
    float fv = static_cast<float>(std::clamp(v - j0, 0.0, 1.0));
    float fw = static_cast<float>(std::clamp(w - k0, 0.0, 1.0));
    TrilinearTap t;
    int c = 0;
    for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk) {
                t.corner[c] = (static_cast<int64_t>(i0 + di) * N + (j0 + dj)) * N + (k0 + dk);
                t.weight[c] = (di ? fu : 1 - fu) * (dj ? fv : 1 - fv) * (dk ? fw : 1 - fw);
                ++c;
            }
    return t;
}

inline bool ray_box(const Ray& r, double& t0, double& t1) {
    t0 = 1e-4;
    t1 = 1e30;
    const double o[3] = {r.origin.x, r.origin.y, r.origin.z};
    const double d[3] = {r.dir.x, r.dir.y, r.dir.z};
    for (int a = 0; a < 3; ++a) {
        if (std::fabs(d[a]) < 1e-12) {
            if (o[a] < -1.0 || o[a] > 1.0) return false;
            continue;
        }
        double ta = (-1.0 - o[a]) / d[a];
        double tb = (1.0 - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0;
}

inline float softplusf(float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); }
inline float sigmoidf(float x) {
    return x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}

struct SampleState {
    float alpha;
    float c[3];
    float raw_sigma;
    float raw_rgb[3];
    TrilinearTap tap;
    bool inside;
};

}  // namespace

Tensor volume_render_rays(const RadianceField& field, const std::vector<Ray>& rays,
                          const RenderOptions& opts) {
    if (opts.n_samples < 2) throw ParamError("volume_render: need at least 2 samples per ray");
    int64_t R = static_cast<int64_t>(rays.size());
    int N = field.res;
    const float* dg = field.density.data();
    const float* cg = field.rgb.data();
    int n = opts.n_samples;
    uint64_t jkey = opts.jitter_key;

    auto march = [=](const Ray& ray, int64_t ray_idx, SampleState* states, float* out3) {
        double t0, t1;
        if (!ray_box(ray, t0, t1)) {
            if (states)
                for (int k = 0; k < n; ++k) states[k].inside = false;
            out3[0] = out3[1] = out3[2] = 1.0f;  // white background
            return;
        }
        double delta = (t1 - t0) / n;
        float T = 1.0f;
        float acc[3] = {0, 0, 0};
        for (int k = 0; k < n; ++k) {
            double jit = jkey ? Rng::uniform_at(jkey, static_cast<uint64_t>(ray_idx) * n + k) : 0.5;
            double t = t0 + (k + jit) * delta;
            Vec3 p = ray.origin + ray.dir * t;
            SampleState st;
            st.inside = (p.x >= -1 && p.x <= 1 && p.y >= -1 && p.y <= 1 && p.z >= -1 && p.z <= 1);
            if (st.inside) {
                st.tap = trilinear(p, N);
                float rs = 0, rr = 0, rg = 0, rb = 0;
                for (int c = 0; c < 8; ++c) {
                    float w = st.tap.weight[c];
                    int64_t idx = st.tap.corner[c];
                    rs += w * dg[idx];
                    rr += w * cg[idx * 3];
                    rg += w * cg[idx * 3 + 1];
                    rb += w * cg[idx * 3 + 2];
                }
                st.raw_sigma = rs;
                st.raw_rgb[0] = rr;
                st.raw_rgb[1] = rg;
                st.raw_rgb[2] = rb;
                float sigma = softplusf(rs);
                st.alpha = 1.0f - std::exp(-sigma * static_cast<float>(delta));
                st.c[0] = sigmoidf(rr);
                st.c[1] = sigmoidf(rg);
                st.c[2] = sigmoidf(rb);
                for (int ch = 0; ch < 3; ++ch) acc[ch] += T * st.alpha * st.c[ch];
                T *= 1.0f - st.alpha;
            }
            if (states) states[k] = st;
        }
        out3[0] = acc[0] + T;
        out3[1] = acc[1] + T;
        out3[2] = acc[2] + T;
    };

    std::vector<float> out(static_cast<size_t>(R) * 3);
    for (int64_t r = 0; r < R; ++r) march(rays[static_cast<size_t>(r)], r, nullptr, out.data() + r * 3);

    std::vector<Ray> rays_copy = rays;
    int field_res = N;
    return custom_op(
        {field.density, field.rgb}, {R, 3}, std::move(out),
        [march, rays_copy, n, field_res, R](const float* gout, const CustomAccumFn& accum) {
            int64_t vox = static_cast<int64_t>(field_res) * field_res * field_res;
            std::vector<float> gd(static_cast<size_t>(vox), 0.0f);
            std::vector<float> gc(static_cast<size_t>(vox) * 3, 0.0f);
            std::vector<SampleState> states(static_cast<size_t>(n));
            float out3[3];
            for (int64_t r = 0; r < R; ++r) {
                const Ray& ray = rays_copy[static_cast<size_t>(r)];
                march(ray, r, states.data(), out3);
                const float* g = gout + r * 3;
                double t0, t1;
                if (!ray_box(ray, t0, t1)) continue;
                float delta = static_cast<float>((t1 - t0) / n);
                // suffix colors: R_k = alpha_k c_k + (1-alpha_k) R_{k+1},
                // with R_n = white; then d(out)/d(alpha_k) = T_k (c_k - R_{k+1})
                std::vector<std::array<float, 3>> suffix(static_cast<size_t>(n) + 1);
                suffix[static_cast<size_t>(n)] = {1.0f, 1.0f, 1.0f};
                for (int k = n - 1; k >= 0; --k) {
                    const SampleState& st = states[static_cast<size_t>(k)];
                    auto& s = suffix[static_cast<size_t>(k)];
                    const auto& nxt = suffix[static_cast<size_t>(k) + 1];
                    if (!st.inside) {
                        s = nxt;
                        continue;
                    }
                    for (int ch = 0; ch < 3; ++ch)
                        s[ch] = st.alpha * st.c[ch] + (1.0f - st.alpha) * nxt[ch];
                }
                float T = 1.0f;
                for (int k = 0; k < n; ++k) {
                    const SampleState& st = states[static_cast<size_t>(k)];
                    if (!st.inside) continue;
                    const auto& nxt = suffix[static_cast<size_t>(k) + 1];
                    float w = T * st.alpha;
                    float dalpha = 0.0f;
                    for (int ch = 0; ch < 3; ++ch) {
                        float dc = g[ch] * w;
                        float draw = dc * st.c[ch] * (1.0f - st.c[ch]);
                        for (int c8 = 0; c8 < 8; ++c8)
                            gc[static_cast<size_t>(st.tap.corner[c8]) * 3 + static_cast<size_t>(ch)] +=
                                st.tap.weight[c8] * draw;
                        dalpha += g[ch] * T * (st.c[ch] - nxt[ch]);
                    }
                    float dsigma = dalpha * delta * (1.0f - st.alpha);
                    float draw_sigma = dsigma * sigmoidf(st.raw_sigma);
                    for (int c8 = 0; c8 < 8; ++c8)
                        gd[static_cast<size_t>(st.tap.corner[c8])] += st.tap.weight[c8] * draw_sigma;
                    T *= 1.0f - st.alpha;
                }
            }
            accum(0, gd.data());
            accum(1, gc.data());
        });
}

std::array<float, 3> volume_render(const RadianceField& field, const Ray& ray, int n_samples) {
    NoGradGuard ng;
    Tensor out = volume_render_rays(field, {ray}, {.n_samples = n_samples});
    return {out.data()[0], out.data()[1], out.data()[2]};
}

Tensor density_tv_loss(const RadianceField& field) {
    int N = field.res;
    const float* d = field.density.data();
    int64_t count = 0;
    double total = 0;
    auto at = [&](int i, int j, int k) {
        return d[(static_cast<int64_t>(i) * N + j) * N + k];
    };
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < N; ++k) {
                float v = at(i, j, k);
                if (i + 1 < N) {
                    float diff = at(i + 1, j, k) - v;
                    total += static_cast<double>(diff) * diff;
                    ++count;
                }
                if (j + 1 < N) {
                    float diff = at(i, j + 1, k) - v;
                    total += static_cast<double>(diff) * diff;
                    ++count;
                }
                if (k + 1 < N) {
                    float diff = at(i, j, k + 1) - v;
                    total += static_cast<double>(diff) * diff;
                    ++count;
                }
            }
    float norm = 1.0f / static_cast<float>(count);
    float value = static_cast<float>(total / count);
    int res = N;
    Tensor dens = field.density;
    return custom_op({field.density}, {1}, {value},
                     [res, dens, norm](const float* gout, const CustomAccumFn& accum) {
                         int N = res;
                         const float* d = dens.data();
                         std::vector<float> gd(static_cast<size_t>(N) * N * N, 0.0f);
                         auto idx = [N](int i, int j, int k) {
                             return (static_cast<int64_t>(i) * N + j) * N + k;
                         };
                         float scale = 2.0f * norm * gout[0];
                         for (int i = 0; i < N; ++i)
                             for (int j = 0; j < N; ++j)
                                 for (int k = 0; k < N; ++k) {
                                     float v = d[idx(i, j, k)];
                                     if (i + 1 < N) {
                                         float diff = d[idx(i + 1, j, k)] - v;
                                         gd[static_cast<size_t>(idx(i + 1, j, k))] += scale * diff;
                                         gd[static_cast<size_t>(idx(i, j, k))] -= scale * diff;
                                     }
                                     if (j + 1 < N) {
                                         float diff = d[idx(i, j + 1, k)] - v;
                                         gd[static_cast<size_t>(idx(i, j + 1, k))] += scale * diff;
                                         gd[static_cast<size_t>(idx(i, j, k))] -= scale * diff;
                                     }
                                     if (k + 1 < N) {
                                         float diff = d[idx(i, j, k + 1)] - v;
                                         gd[static_cast<size_t>(idx(i, j, k + 1))] += scale * diff;
                                         gd[static_cast<size_t>(idx(i, j, k))] -= scale * diff;
                                     }
                                 }
                         accum(0, gd.data());
                     });
}

RadianceField fit_field(const std::vector<Image>& views, const std::vector<SphericalPose>& poses,
                        double fov_rad, const FitOptions& opts) {
    if (views.size() < 2 || views.size() != poses.size())
        throw ParamError("fit_field: need >= 2 posed views (got " + std::to_string(views.size()) +
                         " views, " + std::to_string(poses.size()) + " poses)");
    bool degenerate = true;
    for (size_t i = 1; i < poses.size(); ++i)
        if (std::fabs(poses[i].azimuth - poses[0].azimuth) > 1e-9 ||
            std::fabs(poses[i].polar - poses[0].polar) > 1e-9)
            degenerate = false;
    if (degenerate)
        std::fprintf(stderr, "fit_field: warning: all poses identical; fit is underdetermined\n");

    // precompute rays and target colors for every training pixel
    std::vector<Ray> all_rays;
    std::vector<float> all_rgb;
    for (size_t v = 0; v < views.size(); ++v) {
        const Image& img = views[v];
        auto rays = camera_rays(poses[v], img.height, img.width, fov_rad);
        all_rays.insert(all_rays.end(), rays.begin(), rays.end());
        all_rgb.insert(all_rgb.end(), img.pixels.begin(), img.pixels.end());
    }
    int64_t total = static_cast<int64_t>(all_rays.size());

    RadianceField field(opts.field_res);
    AdamW opt({field.density, field.rgb}, {.lr = opts.lr});
    Rng pick = Rng::derive(opts.seed, "fit.rays");

    int batch = static_cast<int>(std::min<int64_t>(opts.ray_batch, total));
    std::vector<Ray> rays(static_cast<size_t>(batch));
    for (int it = 0; it < opts.iterations; ++it) {
        std::vector<float> target(static_cast<size_t>(batch) * 3);
        for (int b = 0; b < batch; ++b) {
            int64_t idx = static_cast<int64_t>(pick.uniform_index(static_cast<uint64_t>(total)));
            rays[static_cast<size_t>(b)] = all_rays[static_cast<size_t>(idx)];
            for (int c = 0; c < 3; ++c)
                target[static_cast<size_t>(b) * 3 + static_cast<size_t>(c)] =
                    all_rgb[static_cast<size_t>(idx) * 3 + static_cast<size_t>(c)];
        }
        opt.zero_grad();
        RenderOptions ro;
        ro.n_samples = opts.n_samples;
        ro.jitter_key = Rng::derive(opts.seed, "fit.jitter", static_cast<uint64_t>(it)).key() | 1;
        Tensor rendered = volume_render_rays(field, rays, ro);
        Tensor err = sub(rendered, Tensor::from({batch, 3}, std::move(target)));
        Tensor loss = mean_all(mul(err, err));
        if (opts.tv_weight > 0) loss = add(loss, mul(density_tv_loss(field), opts.tv_weight));
        backward(loss);
        opt.step();
    }
    return field;
}

Image render_field_view(const RadianceField& field, const SphericalPose& pose, int res,
                        double fov_rad, int n_samples) {
    NoGradGuard ng;
    auto rays = camera_rays(pose, res, res, fov_rad);
    Tensor out = volume_render_rays(field, rays, {.n_samples = n_samples});
    Image img(res, res);
    const float* d = out.data();
    for (size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = std::clamp(d[i], 0.0f, 1.0f);
    return img;
}

ConsistencyResult consistency_score(const std::vector<Image>& views,
                                    const std::vector<SphericalPose>& poses, double fov_rad,
                                    const FitOptions& opts) {
    if (views.size() < 8)
        throw ParamError("consistency_score: the 7/8-1/8 held-out split needs at least 8 views, got " +
                         std::to_string(views.size()));
    if (views.size() != poses.size())
        throw ParamError("consistency_score: view/pose count mismatch");

    ConsistencyResult res;
    std::vector<Image> train_views;
    std::vector<SphericalPose> train_poses;
    for (size_t i = 0; i < views.size(); ++i) {
        if (i % 8 == 0) {
            res.heldout.push_back(static_cast<int>(i));
        } else {
            train_views.push_back(views[i]);
            train_poses.push_back(poses[i]);
        }
    }
    res.n_train = static_cast<int>(train_views.size());

    RadianceField field = fit_field(train_views, train_poses, fov_rad, opts);

    double psum = 0, ssum = 0;
    for (int i : res.heldout) {
        Image rendered = render_field_view(field, poses[static_cast<size_t>(i)],
                                           views[static_cast<size_t>(i)].height, fov_rad,
                                           opts.n_samples);
        psum += psnr(views[static_cast<size_t>(i)], rendered);
        ssum += ssim(views[static_cast<size_t>(i)], rendered);
    }
    res.psnr = psum / static_cast<double>(res.heldout.size());
    res.ssim = ssum / static_cast<double>(res.heldout.size());
    return res;
}

ConsistencyReport make_report(std::vector<ConsistencyReport::Row> rows) {
    ConsistencyReport rep;
    rep.rows = std::move(rows);
    if (!rep.rows.empty()) {
        for (const auto& r : rep.rows) {
            rep.mean_psnr += r.psnr;
            rep.mean_ssim += r.ssim;
        }
        rep.mean_psnr /= static_cast<double>(rep.rows.size());
        rep.mean_ssim /= static_cast<double>(rep.rows.size());
    }
    return rep;
}

void write_report_csv(const std::string& path, const ConsistencyReport& rep) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write report: " + path);
    f << "# full-frame scoring (white background included)\n";
    f << "object_id,n_views,psnr,ssim,split_seed\n";
    char buf[256];
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%llu\n", r.object_id.c_str(), r.n_views,
                      r.psnr, r.ssim, static_cast<unsigned long long>(r.split_seed));
        f << buf;
    }
    std::snprintf(buf, sizeof(buf), "aggregate,%zu,%.6f,%.6f,0\n", rep.rows.size(), rep.mean_psnr,
                  rep.mean_ssim);
    f << buf;
}

}  // namespace c123
