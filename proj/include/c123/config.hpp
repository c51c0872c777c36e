#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c123 {

// One flat key-value config file drives every command. Every field has a
// default; unknown keys are hard errors. The effective (defaults-resolved)
// config is written next to every output and reloads to an equal config.
struct RunConfig {
    uint64_t seed = 42;

    struct Dataset {
        int n_objects = 8;
        int views_per_object = 18;
        int resolution = 32;
        double fov_deg = 50.0;
        double radius = 2.2;
    } dataset;

    struct Model {
        int base_channels = 32;
        std::vector<int> channel_mults = {1, 2, 4};
        std::vector<int> attn_levels = {1, 2};
        int embed_dim = 128;
        int heads = 4;
        int norm_groups = 8;
        std::string ssa_placement = "decoder";
        bool cross_view = true;
    } model;

    struct Train {
        std::string stage = "base";  // base | consistency
        int steps = 3000;
        int batch_size = 2;
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double weight_decay = 0.0;
        double cond_dropout = 0.1;
        int n_views = 4;  // views per batch item in the consistency stage
        int log_every = 50;
    } train;

    struct Sample {
        int steps = 50;
        double eta = 0.0;
        int n_views = 8;
        std::string pcfg_kind = "concave";
        double w_s = 10.0;
        double w_e = 2.0;
        int chunk_size = 0;  // 0 = sample all views in one round
        std::string object = "auto";  // object id, png path, or "auto"
        std::string checkpoint = "auto";  // auto | base | consistency
        bool use_cross_view = true;
        bool use_ssa = true;
    } sample;

    struct Eval {
        std::string mode = "consistency";  // consistency | gt
        std::string target = "samples";    // samples | dataset
        int n_sample_views = 16;
        int fit_iterations = 2000;
        double fit_lr = 0.05;
        int ray_batch = 1024;
        double tv_weight = 1e-4;
        int field_res = 48;
        int fit_samples = 64;
    } eval;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);
std::string serialize_config(const RunConfig& cfg);
void write_config_file(const std::string& path, const RunConfig& cfg);

}  // namespace c123
