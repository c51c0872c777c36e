#include "c123/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "c123/errors.hpp"

namespace c123 {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ParamError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ParamError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ParamError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParamError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(to_int(key, trim(item))));
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    std::map<std::string, Setter> setters = {
        {"seed", [&](const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},

        {"dataset.n_objects", [&](const std::string& k, const std::string& v) { c.dataset.n_objects = static_cast<int>(to_int(k, v)); }},
        {"dataset.views_per_object", [&](const std::string& k, const std::string& v) { c.dataset.views_per_object = static_cast<int>(to_int(k, v)); }},
        {"dataset.resolution", [&](const std::string& k, const std::string& v) { c.dataset.resolution = static_cast<int>(to_int(k, v)); }},
        {"dataset.fov_deg", [&](const std::string& k, const std::string& v) { c.dataset.fov_deg = to_double(k, v); }},
        {"dataset.radius", [&](const std::string& k, const std::string& v) { c.dataset.radius = to_double(k, v); }},

        {"model.base_channels", [&](const std::string& k, const std::string& v) { c.model.base_channels = static_cast<int>(to_int(k, v)); }},
        {"model.channel_mults", [&](const std::string& k, const std::string& v) { c.model.channel_mults = to_int_list(k, v); }},
        {"model.attn_levels", [&](const std::string& k, const std::string& v) { c.model.attn_levels = to_int_list(k, v); }},
        {"model.embed_dim", [&](const std::string& k, const std::string& v) { c.model.embed_dim = static_cast<int>(to_int(k, v)); }},
        {"model.heads", [&](const std::string& k, const std::string& v) { c.model.heads = static_cast<int>(to_int(k, v)); }},
        {"model.norm_groups", [&](const std::string& k, const std::string& v) { c.model.norm_groups = static_cast<int>(to_int(k, v)); }},
        {"model.ssa_placement", [&](const std::string&, const std::string& v) { c.model.ssa_placement = v; }},
        {"model.cross_view", [&](const std::string& k, const std::string& v) { c.model.cross_view = to_bool(k, v); }},

        {"train.stage", [&](const std::string&, const std::string& v) { c.train.stage = v; }},
        {"train.steps", [&](const std::string& k, const std::string& v) { c.train.steps = static_cast<int>(to_int(k, v)); }},
        {"train.batch_size", [&](const std::string& k, const std::string& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
        {"train.lr", [&](const std::string& k, const std::string& v) { c.train.lr = to_double(k, v); }},
        {"train.beta1", [&](const std::string& k, const std::string& v) { c.train.beta1 = to_double(k, v); }},
        {"train.beta2", [&](const std::string& k, const std::string& v) { c.train.beta2 = to_double(k, v); }},
        {"train.weight_decay", [&](const std::string& k, const std::string& v) { c.train.weight_decay = to_double(k, v); }},
        {"train.cond_dropout", [&](const std::string& k, const std::string& v) { c.train.cond_dropout = to_double(k, v); }},
        {"train.n_views", [&](const std::string& k, const std::string& v) { c.train.n_views = static_cast<int>(to_int(k, v)); }},
        {"train.log_every", [&](const std::string& k, const std::string& v) { c.train.log_every = static_cast<int>(to_int(k, v)); }},

        {"sample.steps", [&](const std::string& k, const std::string& v) { c.sample.steps = static_cast<int>(to_int(k, v)); }},
        {"sample.eta", [&](const std::string& k, const std::string& v) { c.sample.eta = to_double(k, v); }},
        {"sample.n_views", [&](const std::string& k, const std::string& v) { c.sample.n_views = static_cast<int>(to_int(k, v)); }},
        {"sample.pcfg_kind", [&](const std::string&, const std::string& v) { c.sample.pcfg_kind = v; }},
        {"sample.w_s", [&](const std::string& k, const std::string& v) { c.sample.w_s = to_double(k, v); }},
        {"sample.w_e", [&](const std::string& k, const std::string& v) { c.sample.w_e = to_double(k, v); }},
        {"sample.chunk_size", [&](const std::string& k, const std::string& v) { c.sample.chunk_size = static_cast<int>(to_int(k, v)); }},
        {"sample.object", [&](const std::string&, const std::string& v) { c.sample.object = v; }},
        {"sample.checkpoint", [&](const std::string&, const std::string& v) { c.sample.checkpoint = v; }},
        {"sample.use_cross_view", [&](const std::string& k, const std::string& v) { c.sample.use_cross_view = to_bool(k, v); }},
        {"sample.use_ssa", [&](const std::string& k, const std::string& v) { c.sample.use_ssa = to_bool(k, v); }},

        {"eval.mode", [&](const std::string&, const std::string& v) { c.eval.mode = v; }},
        {"eval.target", [&](const std::string&, const std::string& v) { c.eval.target = v; }},
        {"eval.n_sample_views", [&](const std::string& k, const std::string& v) { c.eval.n_sample_views = static_cast<int>(to_int(k, v)); }},
        {"eval.fit_iterations", [&](const std::string& k, const std::string& v) { c.eval.fit_iterations = static_cast<int>(to_int(k, v)); }},
        {"eval.fit_lr", [&](const std::string& k, const std::string& v) { c.eval.fit_lr = to_double(k, v); }},
        {"eval.ray_batch", [&](const std::string& k, const std::string& v) { c.eval.ray_batch = static_cast<int>(to_int(k, v)); }},
        {"eval.tv_weight", [&](const std::string& k, const std::string& v) { c.eval.tv_weight = to_double(k, v); }},
        {"eval.field_res", [&](const std::string& k, const std::string& v) { c.eval.field_res = static_cast<int>(to_int(k, v)); }},
        {"eval.fit_samples", [&](const std::string& k, const std::string& v) { c.eval.fit_samples = static_cast<int>(to_int(k, v)); }},
    };

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParamError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw ParamError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second(key, value);
    }
    return c;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream o;
    o << "seed = " << c.seed << "\n\n";
    o << "dataset.n_objects = " << c.dataset.n_objects << "\n";
    o << "dataset.views_per_object = " << c.dataset.views_per_object << "\n";
    o << "dataset.resolution = " << c.dataset.resolution << "\n";
    o << "dataset.fov_deg = " << fmt_double(c.dataset.fov_deg) << "\n";
    o << "dataset.radius = " << fmt_double(c.dataset.radius) << "\n\n";
    o << "model.base_channels = " << c.model.base_channels << "\n";
    o << "model.channel_mults = " << fmt_int_list(c.model.channel_mults) << "\n";
    o << "model.attn_levels = " << fmt_int_list(c.model.attn_levels) << "\n";
    o << "model.embed_dim = " << c.model.embed_dim << "\n";
    o << "model.heads = " << c.model.heads << "\n";
    o << "model.norm_groups = " << c.model.norm_groups << "\n";
    o << "model.ssa_placement = " << c.model.ssa_placement << "\n";
    o << "model.cross_view = " << (c.model.cross_view ? "true" : "false") << "\n\n";
    o << "train.stage = " << c.train.stage << "\n";
    o << "train.steps = " << c.train.steps << "\n";
    o << "train.batch_size = " << c.train.batch_size << "\n";
    o << "train.lr = " << fmt_double(c.train.lr) << "\n";
    o << "train.beta1 = " << fmt_double(c.train.beta1) << "\n";
    o << "train.beta2 = " << fmt_double(c.train.beta2) << "\n";
    o << "train.weight_decay = " << fmt_double(c.train.weight_decay) << "\n";
    o << "train.cond_dropout = " << fmt_double(c.train.cond_dropout) << "\n";
    o << "train.n_views = " << c.train.n_views << "\n";
    o << "train.log_every = " << c.train.log_every << "\n\n";
    o << "sample.steps = " << c.sample.steps << "\n";
    o << "sample.eta = " << fmt_double(c.sample.eta) << "\n";
    o << "sample.n_views = " << c.sample.n_views << "\n";
    o << "sample.pcfg_kind = " << c.sample.pcfg_kind << "\n";
    o << "sample.w_s = " << fmt_double(c.sample.w_s) << "\n";
    o << "sample.w_e = " << fmt_double(c.sample.w_e) << "\n";
    o << "sample.chunk_size = " << c.sample.chunk_size << "\n";
    o << "sample.object = " << c.sample.object << "\n";
    o << "sample.checkpoint = " << c.sample.checkpoint << "\n";
    o << "sample.use_cross_view = " << (c.sample.use_cross_view ? "true" : "false") << "\n";
    o << "sample.use_ssa = " << (c.sample.use_ssa ? "true" : "false") << "\n\n";
    o << "eval.mode = " << c.eval.mode << "\n";
    o << "eval.target = " << c.eval.target << "\n";
    o << "eval.n_sample_views = " << c.eval.n_sample_views << "\n";
    o << "eval.fit_iterations = " << c.eval.fit_iterations << "\n";
    o << "eval.fit_lr = " << fmt_double(c.eval.fit_lr) << "\n";
    o << "eval.ray_batch = " << c.eval.ray_batch << "\n";
    o << "eval.tv_weight = " << fmt_double(c.eval.tv_weight) << "\n";
    o << "eval.field_res = " << c.eval.field_res << "\n";
    o << "eval.fit_samples = " << c.eval.fit_samples << "\n";
    return o.str();
}

void write_config_file(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config: " + path);
    f << serialize_config(cfg);
}

}  // namespace c123
