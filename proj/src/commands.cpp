#include "c123/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "c123/dataset.hpp"
#include "c123/diffusion.hpp"
#include "c123/errors.hpp"
#include "c123/field.hpp"
#include "c123/metrics.hpp"
#include "c123/model.hpp"
#include "c123/scene.hpp"

namespace fs = std::filesystem;

namespace c123 {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string object_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "obj_%04d", i);
    return buf;
}

UNetConfig model_config(const RunConfig& cfg, bool cross_view) {
    UNetConfig m;
    m.resolution = cfg.dataset.resolution;
    m.base_channels = cfg.model.base_channels;
    m.channel_mults = cfg.model.channel_mults;
    m.attn_levels = cfg.model.attn_levels;
    m.embed_dim = cfg.model.embed_dim;
    m.heads = cfg.model.heads;
    m.norm_groups = cfg.model.norm_groups;
    m.ssa = ssa_from_string(cfg.model.ssa_placement);
    m.cross_view = cross_view;
    m.validate();
    return m;
}

FitOptions fit_options(const RunConfig& cfg, uint64_t seed) {
    FitOptions o;
    o.iterations = cfg.eval.fit_iterations;
    o.lr = static_cast<float>(cfg.eval.fit_lr);
    o.ray_batch = cfg.eval.ray_batch;
    o.tv_weight = static_cast<float>(cfg.eval.tv_weight);
    o.n_samples = cfg.eval.fit_samples;
    o.field_res = cfg.eval.field_res;
    o.seed = seed;
    return o;
}

SamplerConfig sampler_config(const RunConfig& cfg, uint64_t seed, int n_views) {
    SamplerConfig s;
    s.steps = cfg.sample.steps;
    s.eta = cfg.sample.eta;
    s.n_sample = n_views;
    s.pcfg = {pcfg_from_string(cfg.sample.pcfg_kind), cfg.sample.w_s, cfg.sample.w_e,
              cfg.sample.steps};
    s.seed = seed;
    s.fwd.use_cross_view = cfg.sample.use_cross_view;
    s.fwd.use_ssa = cfg.sample.use_ssa;
    return s;
}

TrainSet load_trainset(const std::string& dataset_dir, const DatasetManifest& m) {
    TrainSet set;
    for (const auto& obj : m.objects) {
        if (obj.split != "train") continue;
        TrainObject to;
        for (const auto& v : obj.views) {
            to.images.push_back(load_view_image(dataset_dir, v, m.resolution));
            to.poses.push_back(v.pose);
        }
        set.push_back(std::move(to));
    }
    if (set.empty()) throw UsageError("dataset " + dataset_dir + " has no train-split objects");
    return set;
}

std::string checkpoint_path(const RunConfig& cfg, const std::string& run_dir) {
    std::string choice = cfg.sample.checkpoint;
    fs::path cons = fs::path(run_dir) / "ckpt_consistency.c123";
    fs::path base = fs::path(run_dir) / "ckpt_base.c123";
    if (choice == "base") return base.string();
    if (choice == "consistency") return cons.string();
    if (choice == "auto") return fs::exists(cons) ? cons.string() : base.string();
    return choice;  // explicit path
}

Image quantize_8bit(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels)
        v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    return out;
}

struct SampleSource {
    Image image;
    SphericalPose pose;
    std::string id;
    uint64_t scene_seed = 0;
    bool has_seed = false;
};

SampleSource resolve_sample_source(const RunConfig& cfg, const std::string& run_dir) {
    SampleSource src;
    const std::string& spec = cfg.sample.object;
    if (spec.size() > 4 && spec.substr(spec.size() - 4) == ".png") {
        src.image = read_png(spec);
        src.pose = SphericalPose(kPi / 2, 0.0, cfg.dataset.radius);
        src.id = "external";
        return src;
    }
    std::string ds = (fs::path(run_dir) / "dataset").string();
    DatasetManifest m = load_manifest(ds);
    const ObjectEntry* chosen = nullptr;
    if (spec == "auto") {
        for (const auto& o : m.objects)
            if (o.split == "test") {
                chosen = &o;
                break;
            }
        if (!chosen && !m.objects.empty()) chosen = &m.objects.front();
    } else {
        for (const auto& o : m.objects)
            if (o.id == spec) chosen = &o;
    }
    if (!chosen) throw UsageError("sample.object '" + spec + "' not found in " + ds);
    if (chosen->views.empty()) throw UsageError("object " + chosen->id + " has no views");
    src.image = load_view_image(ds, chosen->views.front(), m.resolution);
    src.pose = chosen->views.front().pose;
    src.id = chosen->id;
    src.scene_seed = chosen->seed;
    src.has_seed = chosen->has_seed;
    return src;
}

// Target poses for sampling: the circular-perturbation protocol anchored at
// the condition azimuth.
std::vector<SphericalPose> sample_targets(const RunConfig& cfg, const SphericalPose& cond,
                                          int n_views, uint64_t seed) {
    PoseSequenceParams pp;
    pp.radius = cfg.dataset.radius;
    auto seq = circular_pose_sequence(n_views, seed, pp);
    std::vector<SphericalPose> out;
    out.reserve(seq.size());
    for (const auto& p : seq)
        out.emplace_back(p.polar, wrap_2pi(p.azimuth + cond.azimuth), p.radius);
    return out;
}

void write_samples_dir(const std::string& dir, const RunConfig& cfg, const SampleSource& src,
                       const std::vector<Image>& images, const std::vector<SphericalPose>& poses) {
    std::vector<ViewRecord> recs;
    for (size_t i = 0; i < images.size(); ++i) recs.push_back({images[i], poses[i]});
    DatasetManifest m;
    m.resolution = cfg.dataset.resolution;
    m.fov_deg = cfg.dataset.fov_deg;
    m.objects.push_back(write_object_views(dir, src.id, src.scene_seed, src.has_seed, "", recs));
    save_manifest(dir, m);
}

}  // namespace

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs < 1) jobs = 1;
    if (jobs == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    int count = std::min(jobs, n);
    threads.reserve(static_cast<size_t>(count));
    for (int t = 0; t < count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

void cmd_dataset(const RunConfig& cfg, const std::string& run_dir, int jobs) {
    if (cfg.dataset.n_objects < 1) throw ParamError("dataset.n_objects must be >= 1");
    if (cfg.dataset.views_per_object < 2) throw ParamError("dataset.views_per_object must be >= 2");
    std::string dir = (fs::path(run_dir) / "dataset").string();
    fs::create_directories(dir);

    uint64_t ds_seed = Rng::derive(cfg.seed, "dataset").key();
    int n = cfg.dataset.n_objects;
    int test_count = std::max(1, (n + 99) / 100);  // 1% of objects, minimum 1

    RenderParams rp;
    rp.fov_rad = cfg.dataset.fov_deg * kPi / 180.0;
    PoseSequenceParams pp;
    pp.radius = cfg.dataset.radius;

    std::vector<ObjectEntry> entries(static_cast<size_t>(n));
    parallel_for(n, jobs, [&](int i) {
        uint64_t scene_seed = Rng::derive(ds_seed, "scene", static_cast<uint64_t>(i)).key();
        uint64_t pose_seed = Rng::derive(ds_seed, "poses", static_cast<uint64_t>(i)).key();
        SceneSpec scene = generate_scene(scene_seed);
        auto poses = circular_pose_sequence(cfg.dataset.views_per_object, pose_seed, pp);
        std::vector<ViewRecord> recs;
        recs.reserve(poses.size());
        for (const auto& pose : poses)
            recs.push_back({render_view(scene, pose, cfg.dataset.resolution, rp), pose});
        std::string split = (i >= n - test_count) ? "test" : "train";
        entries[static_cast<size_t>(i)] =
            write_object_views(dir, object_id(i), scene_seed, true, split, recs);
    });

    DatasetManifest m;
    m.resolution = cfg.dataset.resolution;
    m.fov_deg = cfg.dataset.fov_deg;
    m.objects = std::move(entries);
    save_manifest(dir, m);
    write_config_file((fs::path(dir) / "config.effective").string(), cfg);
}

void cmd_train(const RunConfig& cfg, const std::string& run_dir) {
    const std::string& stage = cfg.train.stage;
    if (stage != "base" && stage != "consistency")
        throw ParamError("train.stage must be 'base' or 'consistency', got '" + stage + "'");
    std::string ds = (fs::path(run_dir) / "dataset").string();
    DatasetManifest manifest = load_manifest(ds);
    if (manifest.resolution != cfg.dataset.resolution)
        throw ParamError("dataset resolution " + std::to_string(manifest.resolution) +
                         " does not match config dataset.resolution " +
                         std::to_string(cfg.dataset.resolution));
    TrainSet data = load_trainset(ds, manifest);
    NoiseSchedule schedule = build_schedule();

    TrainStepConfig tc;
    tc.batch_size = cfg.train.batch_size;
    tc.cond_dropout = cfg.train.cond_dropout;

    std::unique_ptr<UNet> model;
    ParamGroup trainable = ParamGroup::All;
    if (stage == "base") {
        model = std::make_unique<UNet>(model_config(cfg, false),
                                       Rng::derive(cfg.seed, "init.base").key());
        tc.n_views = 1;
        trainable = ParamGroup::All;
    } else {
        fs::path base_path = fs::path(run_dir) / "ckpt_base.c123";
        if (!fs::exists(base_path))
            throw UsageError("train.stage=consistency requires the base checkpoint at " +
                             base_path.string() + "; run the base stage first");
        UNet base = UNet::load(base_path.string());
        if (base.config().resolution != cfg.dataset.resolution)
            throw ParamError("checkpoint resolution " + std::to_string(base.config().resolution) +
                             " does not match dataset resolution " +
                             std::to_string(cfg.dataset.resolution));
        model = std::make_unique<UNet>(
            UNet::extend_with_cross_view(base, Rng::derive(cfg.seed, "init.xview").key()));
        tc.n_views = cfg.train.n_views;
        trainable = ParamGroup::CrossViewOnly;
    }
    model->set_trainable(trainable);

    std::vector<Tensor> params;
    for (auto& [name, t] : model->parameters(trainable)) params.push_back(t);
    AdamW opt(params, {.lr = static_cast<float>(cfg.train.lr),
                       .beta1 = static_cast<float>(cfg.train.beta1),
                       .beta2 = static_cast<float>(cfg.train.beta2),
                       .weight_decay = static_cast<float>(cfg.train.weight_decay)});

    Rng rng = Rng::derive(cfg.seed, "train." + stage);
    std::ofstream loss_csv(fs::path(run_dir) / ("loss_" + stage + ".csv"));
    loss_csv << "step,loss\n";
    double window = 0;
    int window_n = 0;
    for (int step = 1; step <= cfg.train.steps; ++step) {
        float loss = training_step(*model, opt, data, schedule, tc, rng);
        window += loss;
        ++window_n;
        if (step % cfg.train.log_every == 0 || step == cfg.train.steps) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%d,%.6f\n", step, window / window_n);
            loss_csv << buf;
            window = 0;
            window_n = 0;
        }
    }

    std::string ckpt = (fs::path(run_dir) / ("ckpt_" + stage + ".c123")).string();
    model->save(ckpt);
    write_config_file((fs::path(run_dir) / ("config.effective." + stage)).string(), cfg);
}

void cmd_sample(const RunConfig& cfg, const std::string& run_dir) {
    std::string ckpt = checkpoint_path(cfg, run_dir);
    if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt);
    UNet model = UNet::load(ckpt);
    if (model.config().resolution != cfg.dataset.resolution)
        throw ParamError("checkpoint resolution " + std::to_string(model.config().resolution) +
                         " does not match config dataset.resolution " +
                         std::to_string(cfg.dataset.resolution));
    if (cfg.sample.n_views < 1) throw ParamError("sample.n_views must be >= 1");

    SampleSource src = resolve_sample_source(cfg, run_dir);
    uint64_t pose_seed = Rng::derive(cfg.seed, "sample.poses").key();
    NoiseSchedule schedule = build_schedule();
    SamplerConfig sc = sampler_config(cfg, Rng::derive(cfg.seed, "sample").key(), cfg.sample.n_views);

    std::vector<SphericalPose> targets;
    std::vector<Image> images;
    if (cfg.sample.n_views == 1) {
        // single-view synthesis: one target at a perturbed pose
        Rng r(pose_seed);
        targets.emplace_back(r.uniform(75.0, 105.0) * kPi / 180.0,
                             wrap_2pi(src.pose.azimuth + r.uniform(kPi / 18, kPi / 6)),
                             cfg.dataset.radius);
        images = ddim_sample(model, src.image, {relative_pose(src.pose, targets[0])}, sc, schedule);
    } else {
        targets = sample_targets(cfg, src.pose, cfg.sample.n_views, pose_seed);
        if (cfg.sample.chunk_size > 0) {
            images = chunked_sample(model, src.image, src.pose, targets, cfg.sample.chunk_size, sc,
                                    schedule);
        } else {
            std::vector<RelativePose> rel;
            rel.reserve(targets.size());
            for (const auto& t : targets) rel.push_back(relative_pose(src.pose, t));
            images = ddim_sample(model, src.image, rel, sc, schedule);
        }
    }

    std::string dir = (fs::path(run_dir) / "samples").string();
    write_samples_dir(dir, cfg, src, images, targets);
    write_config_file((fs::path(dir) / "config.effective").string(), cfg);
}

void cmd_eval(const RunConfig& cfg, const std::string& run_dir, int jobs) {
    const std::string& mode = cfg.eval.mode;
    if (mode != "consistency" && mode != "gt")
        throw ParamError("eval.mode must be 'consistency' or 'gt', got '" + mode + "'");
    std::string target_dir =
        (fs::path(run_dir) / (cfg.eval.target == "dataset" ? "dataset" : "samples")).string();
    DatasetManifest m = load_manifest(target_dir);
    double fov_rad = m.fov_deg * kPi / 180.0;

    std::vector<ConsistencyReport::Row> rows(m.objects.size());
    if (mode == "consistency") {
        parallel_for(static_cast<int>(m.objects.size()), jobs, [&](int oi) {
            const auto& obj = m.objects[static_cast<size_t>(oi)];
            std::vector<Image> views;
            std::vector<SphericalPose> poses;
            for (const auto& v : obj.views) {
                views.push_back(load_view_image(target_dir, v, m.resolution));
                poses.push_back(v.pose);
            }
            uint64_t split_seed = Rng::derive(cfg.seed, "eval", static_cast<uint64_t>(oi)).key();
            ConsistencyResult r = consistency_score(views, poses, fov_rad, fit_options(cfg, split_seed));
            rows[static_cast<size_t>(oi)] = {obj.id, static_cast<int>(obj.views.size()), r.psnr,
                                             r.ssim, split_seed};
        });
    } else {
        parallel_for(static_cast<int>(m.objects.size()), jobs, [&](int oi) {
            const auto& obj = m.objects[static_cast<size_t>(oi)];
            if (!obj.has_seed)
                throw UsageError("gt mode: object " + obj.id +
                                 " has no scene seed; cannot re-render ground truth");
            SceneSpec scene = generate_scene(obj.seed);
            RenderParams rp;
            rp.fov_rad = fov_rad;
            double psum = 0, ssum = 0;
            for (const auto& v : obj.views) {
                Image sampled = load_view_image(target_dir, v, m.resolution);
                Image gt = quantize_8bit(render_view(scene, v.pose, m.resolution, rp));
                psum += psnr(sampled, gt);
                ssum += ssim(sampled, gt);
            }
            uint64_t split_seed = Rng::derive(cfg.seed, "eval", static_cast<uint64_t>(oi)).key();
            rows[static_cast<size_t>(oi)] = {obj.id, static_cast<int>(obj.views.size()),
                                             psum / static_cast<double>(obj.views.size()),
                                             ssum / static_cast<double>(obj.views.size()), split_seed};
        });
    }

    ConsistencyReport rep = make_report(std::move(rows));
    std::string csv = (fs::path(run_dir) / ("eval_" + mode + ".csv")).string();
    write_report_csv(csv, rep);
    write_config_file((fs::path(run_dir) / ("config.effective.eval_" + mode)).string(), cfg);
}

void cmd_ablate(const RunConfig& cfg, const std::string& run_dir, const std::string& axis,
                int jobs) {
    (void)jobs;
    std::string ckpt = checkpoint_path(cfg, run_dir);
    if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt);
    UNet model = UNet::load(ckpt);
    NoiseSchedule schedule = build_schedule();
    SampleSource src = resolve_sample_source(cfg, run_dir);
    uint64_t pose_seed = Rng::derive(cfg.seed, "sample.poses").key();
    double fov_rad = cfg.dataset.fov_deg * kPi / 180.0;

    auto score_setting = [&](const std::string& label, const SamplerConfig& sc, int n_views) {
        auto targets = sample_targets(cfg, src.pose, n_views, pose_seed);
        std::vector<RelativePose> rel;
        for (const auto& t : targets) rel.push_back(relative_pose(src.pose, t));
        auto images = ddim_sample(model, src.image, rel, sc, schedule);
        std::vector<SphericalPose> poses = targets;
        ConsistencyResult r = consistency_score(
            images, poses, fov_rad, fit_options(cfg, Rng::derive(cfg.seed, "ablate").key()));
        return ConsistencyReport::Row{label, n_views, r.psnr, r.ssim,
                                      Rng::derive(cfg.seed, "ablate").key()};
    };

    std::vector<ConsistencyReport::Row> rows;
    uint64_t sample_seed = Rng::derive(cfg.seed, "sample").key();
    int n_views = std::max(cfg.eval.n_sample_views, 8);
    if (axis == "pcfg_kind") {
        for (const std::string kind : {"constant", "linear", "concave", "convex"}) {
            SamplerConfig sc = sampler_config(cfg, sample_seed, n_views);
            sc.pcfg.kind = pcfg_from_string(kind);
            rows.push_back(score_setting(kind, sc, n_views));
        }
    } else if (axis == "ssa_placement") {
        for (const std::string placement : {"encoder", "decoder", "whole", "off"}) {
            SamplerConfig sc = sampler_config(cfg, sample_seed, n_views);
            sc.fwd.ssa_override = ssa_from_string(placement);
            sc.fwd.use_ssa = placement != "off";
            rows.push_back(score_setting(placement, sc, n_views));
        }
    } else if (axis == "n_sample_views") {
        for (int n : {8, 16, 32}) {
            SamplerConfig sc = sampler_config(cfg, sample_seed, n);
            rows.push_back(score_setting(std::to_string(n), sc, n));
        }
    } else {
        throw ParamError("ablate axis must be pcfg_kind | ssa_placement | n_sample_views, got '" +
                         axis + "'");
    }

    ConsistencyReport rep = make_report(std::move(rows));
    write_report_csv((fs::path(run_dir) / ("ablate_" + axis + ".csv")).string(), rep);
    write_config_file((fs::path(run_dir) / ("config.effective.ablate_" + axis)).string(), cfg);
}

}  // namespace c123
