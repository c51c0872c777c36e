#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "c123/diffusion.hpp"
#include "c123/errors.hpp"
#include "c123/scene.hpp"

using namespace c123;

namespace {

UNetConfig tiny_config(bool cross_view, int res = 8) {
    UNetConfig cfg;
    cfg.resolution = res;
    cfg.base_channels = 8;
    cfg.channel_mults = {1, 2};
    cfg.attn_levels = {1};
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.norm_groups = 4;
    cfg.ssa = SsaPlacement::Decoder;
    cfg.cross_view = cross_view;
    return cfg;
}

void randomize_output_conv(UNet& model, uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : model.parameters(ParamGroup::All))
        if (name == "base.out.conv.w" || name == "base.out.conv.b") {
            Tensor tt(t);
            for (int64_t i = 0; i < tt.numel(); ++i) tt.data()[i] = rng.normalf() * 0.05f;
        }
}

Image random_image(int res, uint64_t seed) {
    Image img(res, res);
    Rng rng(seed);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

std::vector<RelativePose> random_poses(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<RelativePose> out;
    for (int i = 0; i < n; ++i) {
        RelativePose p;
        p.d_polar = rng.uniform(-0.3, 0.3);
        double da = rng.uniform(-3.0, 3.0);
        p.sin_d_azimuth = std::sin(da);
        p.cos_d_azimuth = std::cos(da);
        out.push_back(p);
    }
    return out;
}

TrainSet tiny_trainset(int n_objects, int views, int res, uint64_t seed) {
    TrainSet set;
    for (int o = 0; o < n_objects; ++o) {
        SceneSpec scene = generate_scene(seed + static_cast<uint64_t>(o));
        auto recs = render_object(scene, views, seed + 100 + static_cast<uint64_t>(o), res);
        TrainObject obj;
        for (auto& r : recs) {
            obj.images.push_back(std::move(r.image));
            obj.poses.push_back(r.pose);
        }
        set.push_back(std::move(obj));
    }
    return set;
}

}  // namespace

TEST_CASE("build_schedule: definitions and the end-of-schedule value") {
    NoiseSchedule s = build_schedule();
    CHECK(s.alpha_bar[0] == 1.0f);
    CHECK(s.alpha_bar[1] == doctest::Approx(1.0f - s.beta[1]).epsilon(1e-7));
    for (int t = 1; t <= s.T; ++t) {
        CHECK(s.beta[static_cast<size_t>(t)] > 0.0f);
        CHECK(s.beta[static_cast<size_t>(t)] < 1.0f);
        CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
    }
    // independent double-precision product oracle
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        double b = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0;
        prod *= 1.0 - b;
    }
    CHECK(s.alpha_bar[1000] == doctest::Approx(prod).epsilon(1e-4));
    CHECK(s.alpha_bar[1000] < 5e-5f);

    CHECK_THROWS_AS(build_schedule(0.0, 0.02), ParamError);
    CHECK_THROWS_AS(build_schedule(0.3, 0.2), ParamError);
}

TEST_CASE("forward_diffuse: deterministic branch and small-t limit") {
    NoiseSchedule s = build_schedule();
    Rng rng(1);
    Tensor x0 = Tensor::randn({3, 4, 4}, rng);
    Tensor zero = Tensor::zeros({3, 4, 4});
    Tensor xt = forward_diffuse(x0, 500, zero, s);
    float a = std::sqrt(s.alpha_bar[500]);
    for (int64_t i = 0; i < x0.numel(); ++i)
        CHECK(xt.data()[i] == doctest::Approx(a * x0.data()[i]).epsilon(1e-7));

    // t = 1 with tiny beta: x^1 stays within sqrt(beta_1)*3 sigma of x0
    Tensor eps = Tensor::randn({3, 4, 4}, rng);
    Tensor x1 = forward_diffuse(x0, 1, eps, s);
    float bound = 3.0f * std::sqrt(s.beta[1]) + 1e-3f;
    for (int64_t i = 0; i < x0.numel(); ++i)
        CHECK(std::fabs(x1.data()[i] - x0.data()[i]) <= bound * std::max(1.0f, std::fabs(eps.data()[i])));

    CHECK_THROWS_AS(forward_diffuse(x0, 0, zero, s), ParamError);
    CHECK_THROWS_AS(forward_diffuse(x0, 1001, zero, s), ParamError);
}

TEST_CASE("forward_diffuse marginal matches stepwise composition (Monte Carlo)") {
    NoiseSchedule s = build_schedule();
    const int N = 20000;  // acceptance runs the full 1e5-sample version
    Rng rng(2);
    double x0 = 0.7;
    for (int t : {10, 500, 999}) {
        double ab = s.alpha_bar[static_cast<size_t>(t)];
        double mean_th = std::sqrt(ab) * x0, var_th = 1.0 - ab;
        // stepwise composition of the single-step kernel
        double sum = 0, sum2 = 0;
        for (int i = 0; i < N; ++i) {
            double x = x0;
            for (int k = 1; k <= t; ++k) {
                double b = s.beta[static_cast<size_t>(k)];
                x = std::sqrt(1.0 - b) * x + std::sqrt(b) * rng.normal();
            }
            sum += x;
            sum2 += x * x;
        }
        double mean = sum / N;
        double var = sum2 / N - mean * mean;
        CHECK(std::fabs(mean - mean_th) < 0.02 * std::max(1.0, std::fabs(mean_th)));
        CHECK(std::fabs(var / var_th - 1.0) < 0.04);
    }
}

TEST_CASE("cfg_combine identities") {
    Rng rng(3);
    Tensor a = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor b = Tensor::randn({2, 3, 4, 4}, rng);

    // w = 0 returns the conditional branch
    Tensor r0 = cfg_combine(a, b, 0.0);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(r0.data()[i] == a.data()[i]);

    // equal branches are a fixed point for any w
    for (double w : {0.0, 1.0, 10.0, -2.5}) {
        Tensor r = cfg_combine(a, a, w);
        for (int64_t i = 0; i < a.numel(); ++i)
            CHECK(r.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-5));
    }

    // scalar arithmetic: w=10, cond=1, uncond=0 -> 11
    Tensor one = Tensor::full({1}, 1.0f);
    Tensor zero = Tensor::zeros({1});
    CHECK(cfg_combine(one, zero, 10.0).item() == 11.0f);

    CHECK_THROWS_AS(cfg_combine(a, Tensor::zeros({3}), 1.0), ShapeError);
}

TEST_CASE("pcfg_weight: endpoints, derived values, domain errors, monotonicity") {
    PCFGSchedule lin{PcfgKind::Linear, 10.0, 2.0, 50};
    CHECK(pcfg_weight(0, lin) == 10.0);
    CHECK(pcfg_weight(50, lin) == 2.0);

    PCFGSchedule con{PcfgKind::Concave, 10.0, 2.0, 50};
    CHECK(pcfg_weight(0, con) == 10.0);
    CHECK(pcfg_weight(50, con) == 2.0);
    CHECK(pcfg_weight(25, con) == doctest::Approx(8.0).epsilon(1e-12));  // 10 + (2-10)*625/2500

    PCFGSchedule cvx{PcfgKind::Convex, 10.0, 2.0, 50};
    CHECK(pcfg_weight(1, cvx) == doctest::Approx(12.0).epsilon(1e-12));
    CHECK(pcfg_weight(50, cvx) == doctest::Approx(2.2).epsilon(1e-12));
    CHECK_THROWS_AS(pcfg_weight(0, cvx), ParamError);

    PCFGSchedule cst{PcfgKind::Constant, 7.5, 2.0, 50};
    CHECK(pcfg_weight(0, cst) == 7.5);
    CHECK(pcfg_weight(33, cst) == 7.5);

    // monotone non-increasing for w_s >= w_e over each domain
    for (PcfgKind kind : {PcfgKind::Constant, PcfgKind::Linear, PcfgKind::Concave, PcfgKind::Convex}) {
        PCFGSchedule s{kind, 10.0, 2.0, 50};
        int t0 = (kind == PcfgKind::Convex) ? 1 : 0;
        double prev = pcfg_weight(t0, s);
        for (int t = t0 + 1; t <= 50; ++t) {
            double w = pcfg_weight(t, s);
            CHECK(w <= prev + 1e-12);
            prev = w;
        }
    }
}

TEST_CASE("training: untrained loss is about 1.0 (zero-output model)") {
    UNet model(tiny_config(false), 21);
    TrainSet data = tiny_trainset(1, 4, 8, 900);
    std::vector<Tensor> params;
    for (auto& [n, t] : model.parameters(ParamGroup::All)) params.push_back(t);
    AdamW opt(params, {.lr = 0.0f});  // lr 0: measure the loss without moving
    NoiseSchedule s = build_schedule();
    Rng rng(4);
    double avg = 0;
    int reps = 20;
    for (int i = 0; i < reps; ++i)
        avg += training_step(model, opt, data, s, {.n_views = 1, .batch_size = 1, .cond_dropout = 0.1},
                             rng);
    avg /= reps;
    // E||eps - 0||^2 per element = Var(eps) = 1
    CHECK(avg == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("training: loss decreases over 200 steps on a 1-object dataset") {
    UNet model(tiny_config(false), 22);
    TrainSet data = tiny_trainset(1, 4, 8, 901);
    std::vector<Tensor> params;
    for (auto& [n, t] : model.parameters(ParamGroup::All)) params.push_back(t);
    AdamW opt(params, {.lr = 3e-3f});
    NoiseSchedule s = build_schedule();
    Rng rng(5);
    TrainStepConfig tc{.n_views = 1, .batch_size = 2, .cond_dropout = 0.1};
    double first = 0, last = 0;
    for (int i = 0; i < 200; ++i) {
        float l = training_step(model, opt, data, s, tc, rng);
        if (i < 20) first += l;
        if (i >= 180) last += l;
    }
    CHECK(last / 20.0 < first / 20.0);
}

TEST_CASE("training: cond_dropout = 1 makes the prediction independent of the condition") {
    // with drop_condition the learned null replaces the embedding, the concat
    // channels and the condition stream, so swapping the condition image
    // cannot change the prediction
    UNet model(tiny_config(false), 23);
    randomize_output_conv(model, 2323);
    Rng rng(7);
    ViewBatch b;
    b.noisy = Tensor::randn({2, 3, 8, 8}, rng);
    b.cond_image = Tensor::randn({3, 8, 8}, rng);
    b.rel_poses = random_poses(2, 70);
    b.timestep = 321;
    ViewBatch b2 = b;
    b2.cond_image = Tensor::randn({3, 8, 8}, rng);  // different condition
    NoGradGuard ng;
    Tensor p1 = model.predict_noise(b, true);
    Tensor p2 = model.predict_noise(b2, true);
    REQUIRE(p1.shape() == p2.shape());
    for (int64_t i = 0; i < p1.numel(); ++i) CHECK(p1.data()[i] == p2.data()[i]);
}

TEST_CASE("ddim_sample: determinism, shape contract, output range") {
    UNet model(tiny_config(true), 24);
    randomize_output_conv(model, 2424);
    NoiseSchedule s = build_schedule();
    Image cond = random_image(8, 40);

    for (int n : {1, 4, 8, 16}) {
        SamplerConfig cfg;
        cfg.n_sample = n;
        cfg.seed = 9;
        auto imgs = ddim_sample(model, cond, random_poses(n, 41), cfg, s);
        REQUIRE(static_cast<int>(imgs.size()) == n);
        for (const auto& img : imgs)
            for (float v : img.pixels) {
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
    }

    SamplerConfig cfg;
    cfg.seed = 10;
    auto a = ddim_sample(model, cond, random_poses(3, 42), cfg, s);
    auto b = ddim_sample(model, cond, random_poses(3, 42), cfg, s);
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(std::memcmp(a[i].pixels.data(), b[i].pixels.data(),
                          a[i].pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("constant PCFG equals plain CFG bit-exactly") {
    UNet model(tiny_config(true), 25);
    randomize_output_conv(model, 2525);
    NoiseSchedule s = build_schedule();
    Image cond = random_image(8, 50);
    auto poses = random_poses(2, 51);

    SamplerConfig constant;
    constant.pcfg = {PcfgKind::Constant, 3.0, 3.0, 50};
    constant.seed = 11;
    SamplerConfig plain = constant;
    plain.plain_cfg = true;

    auto a = ddim_sample(model, cond, poses, constant, s);
    auto b = ddim_sample(model, cond, poses, plain, s);
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(std::memcmp(a[i].pixels.data(), b[i].pixels.data(),
                          a[i].pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("sampler view-permutation equivariance (noise permuted with poses)") {
    UNet model(tiny_config(true), 26);
    randomize_output_conv(model, 2626);
    NoiseSchedule s = build_schedule();
    Image cond = random_image(8, 60);
    auto poses = random_poses(4, 61);
    Rng nrng(62);
    Tensor noise = Tensor::randn({4, 3, 8, 8}, nrng);

    SamplerConfig cfg;
    auto base = ddim_sample(model, cond, poses, cfg, s, &noise);

    std::vector<int> perm = {3, 1, 0, 2};
    std::vector<RelativePose> pposes;
    std::vector<Tensor> rows;
    for (int i : perm) {
        pposes.push_back(poses[static_cast<size_t>(i)]);
        rows.push_back(slice(noise, 0, i, 1));
    }
    Tensor pnoise = concat(rows, 0);
    auto permuted = ddim_sample(model, cond, pposes, cfg, s, &pnoise);

    for (size_t k = 0; k < perm.size(); ++k) {
        double maxd = image_max_abs_diff(permuted[k], base[static_cast<size_t>(perm[k])]);
        CHECK(maxd <= 1e-4);
    }
}

TEST_CASE("chunked_sample: degenerate chunking equals ddim_sample") {
    UNet model(tiny_config(true), 27);
    randomize_output_conv(model, 2727);
    NoiseSchedule s = build_schedule();
    Image cond = random_image(8, 70);
    SphericalPose cond_pose(1.5, 0.3, 2.2);
    auto targets = circular_pose_sequence(4, 71);

    SamplerConfig cfg;
    cfg.seed = 12;
    auto chunked = chunked_sample(model, cond, cond_pose, targets, 8, cfg, s);

    std::vector<RelativePose> rel;
    for (const auto& t : targets) rel.push_back(relative_pose(cond_pose, t));
    auto direct = ddim_sample(model, cond, rel, cfg, s);
    REQUIRE(chunked.size() == direct.size());
    for (size_t i = 0; i < chunked.size(); ++i)
        CHECK(std::memcmp(chunked[i].pixels.data(), direct[i].pixels.data(),
                          chunked[i].pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("chunked_sample: two chunks cover all poses; re-based poses compose exactly") {
    SphericalPose cond_pose(1.5, 0.0, 2.2);
    auto targets = circular_pose_sequence(16, 72);
    ChunkPlan plan = plan_chunks(cond_pose, targets, 8);
    REQUIRE(plan.chunks.size() == 2);
    CHECK(plan.chunks[0].cond_index == -1);
    CHECK(plan.chunks[1].cond_index >= 0);

    // every target appears exactly once
    std::vector<int> seen(16, 0);
    for (const auto& c : plan.chunks)
        for (int t : c.targets) seen[static_cast<size_t>(t)]++;
    for (int v : seen) CHECK(v == 1);

    // pose re-basing oracle: cond pose + rel == absolute target
    for (const auto& c : plan.chunks) {
        SphericalPose cp = c.cond_index < 0 ? cond_pose : targets[static_cast<size_t>(c.cond_index)];
        for (size_t k = 0; k < c.targets.size(); ++k) {
            SphericalPose back = apply_relative(cp, c.rel[k]);
            const SphericalPose& want = targets[static_cast<size_t>(c.targets[k])];
            CHECK(std::fabs(back.polar - want.polar) < 1e-6);
            CHECK(std::fabs(wrap_pi(back.azimuth - want.azimuth)) < 1e-6);
            CHECK(std::fabs(back.radius - want.radius) < 1e-6);
        }
    }

    // sampling through the plan produces 16 finite images
    UNet model(tiny_config(true), 28);
    randomize_output_conv(model, 2828);
    NoiseSchedule s = build_schedule();
    SamplerConfig cfg;
    cfg.steps = 10;  // keep the test quick
    auto imgs = chunked_sample(model, random_image(8, 73), cond_pose, targets, 8, cfg, s);
    CHECK(imgs.size() == 16);
    for (const auto& img : imgs)
        for (float v : img.pixels) CHECK(std::isfinite(v));

    CHECK_THROWS_AS(plan_chunks(cond_pose, targets, 1), ParamError);
}
