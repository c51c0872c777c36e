#include "c123/model.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <optional>

#include "c123/errors.hpp"

namespace c123 {

SsaPlacement ssa_from_string(const std::string& s) {
    if (s == "off") return SsaPlacement::Off;
    if (s == "encoder") return SsaPlacement::Encoder;
    if (s == "decoder") return SsaPlacement::Decoder;
    if (s == "whole") return SsaPlacement::Whole;
    throw ParamError("unknown shared-self-attention placement: " + s);
}

std::string to_string(SsaPlacement p) {
    switch (p) {
        case SsaPlacement::Off: return "off";
        case SsaPlacement::Encoder: return "encoder";
        case SsaPlacement::Decoder: return "decoder";
        default: return "whole";
    }
}

void UNetConfig::validate() const {
    int levels = static_cast<int>(channel_mults.size());
    if (levels < 1) throw ParamError("UNetConfig: need at least one level");
    int down = 1 << (levels - 1);
    if (resolution % down != 0)
        throw ParamError("UNetConfig: resolution " + std::to_string(resolution) +
                         " not divisible by 2^(levels-1) = " + std::to_string(down));
    for (int l = 0; l < levels; ++l) {
        int c = base_channels * channel_mults[static_cast<size_t>(l)];
        if (c % norm_groups != 0)
            throw ParamError("UNetConfig: level " + std::to_string(l) + " channels " +
                             std::to_string(c) + " not divisible by norm groups");
        if (level_has_attn(l) && c % heads != 0)
            throw ParamError("UNetConfig: level " + std::to_string(l) + " channels " +
                             std::to_string(c) + " not divisible by heads");
    }
    for (int l : attn_levels)
        if (l < 0 || l >= levels) throw ParamError("UNetConfig: attention level out of range");
    if (base_channels % 2 != 0) throw ParamError("UNetConfig: base_channels must be even");
}

bool UNetConfig::level_has_attn(int level) const {
    for (int l : attn_levels)
        if (l == level) return true;
    return false;
}

namespace {

enum class Section { Encoder, Mid, Decoder };

bool ssa_active(SsaPlacement p, Section s) {
    switch (p) {
        case SsaPlacement::Off: return false;
        case SsaPlacement::Encoder: return s == Section::Encoder;
        case SsaPlacement::Decoder: return s == Section::Decoder;
        default: return true;
    }
}

// Registers parameters under hierarchical names as layers are built.
struct Registry {
    NamedTensors params;
    Rng rng;
    explicit Registry(uint64_t seed) : rng(Rng::mix(seed ^ 0x756e6574u)) {}

    Tensor add(const std::string& name, const Shape& shape, float init_std) {
        Tensor t = init_std > 0 ? mul(Tensor::randn(shape, rng), init_std).detach()
                                : Tensor::zeros(shape);
        t.set_requires_grad(true);
        params.emplace_back(name, t);
        return t;
    }
    Tensor add_const(const std::string& name, const Shape& shape, float value) {
        Tensor t = Tensor::full(shape, value);
        t.set_requires_grad(true);
        params.emplace_back(name, t);
        return t;
    }
};

struct Dense {
    Tensor w, b;  // w: [in, out]
    Dense() = default;
    Dense(Registry& r, const std::string& name, int64_t in, int64_t out, bool zero_init = false) {
        w = r.add(name + ".w", {in, out}, zero_init ? 0.0f : 1.0f / std::sqrt(static_cast<float>(in)));
        b = r.add(name + ".b", {out}, 0.0f);
    }
    Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct Conv {
    Tensor w, b;
    int stride = 1, pad = 1;
    Conv() = default;
    Conv(Registry& r, const std::string& name, int64_t cin, int64_t cout, int k, int stride_,
         int pad_, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        float std = zero_init ? 0.0f : 1.0f / std::sqrt(static_cast<float>(cin * k * k));
        w = r.add(name + ".w", {cout, cin, k, k}, std);
        b = r.add(name + ".b", {cout}, 0.0f);
    }
    Tensor operator()(const Tensor& x) const {
        return add(conv2d(x, w, stride, pad), reshape(b, {b.numel(), 1, 1}));
    }
};

struct Norm {
    Tensor gamma, beta;
    int groups = 8;
    Norm() = default;
    Norm(Registry& r, const std::string& name, int64_t c, int groups_) : groups(groups_) {
        gamma = r.add_const(name + ".g", {c}, 1.0f);
        beta = r.add(name + ".b", {c}, 0.0f);
    }
    Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};

struct ResBlock {
    Norm n1, n2;
    Conv c1, c2;
    Dense temb_proj;
    std::optional<Conv> skip;
    ResBlock() = default;
    ResBlock(Registry& r, const std::string& name, int64_t cin, int64_t cout, int64_t temb_dim,
             int groups) {
        n1 = Norm(r, name + ".n1", cin, groups);
        c1 = Conv(r, name + ".c1", cin, cout, 3, 1, 1);
        temb_proj = Dense(r, name + ".t", temb_dim, cout);
        n2 = Norm(r, name + ".n2", cout, groups);
        c2 = Conv(r, name + ".c2", cout, cout, 3, 1, 1);
        if (cin != cout) skip = Conv(r, name + ".skip", cin, cout, 1, 1, 0);
    }
    Tensor forward(const Tensor& x, const Tensor& temb) const {
        Tensor h = c1(silu(n1(x)));
        Tensor t = temb_proj(reshape(silu(temb), {1, temb.numel()}));  // [1, cout]
        h = add(h, reshape(t, {t.numel(), 1, 1}));
        h = c2(silu(n2(h)));
        return add(skip ? (*skip)(x) : x, h);
    }
};

// [S,C,H,W] <-> [S,T,C]
Tensor to_tokens(const Tensor& x) {
    return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}
Tensor from_tokens(const Tensor& t, int64_t h, int64_t w) {
    return reshape(permute(t, {0, 2, 1}), {t.dim(0), t.dim(2), h, w});
}

Tensor split_heads(const Tensor& t, int heads) {
    int64_t b = t.dim(0), tok = t.dim(1), c = t.dim(2);
    return permute(reshape(t, {b, tok, heads, c / heads}), {0, 2, 1, 3});
}
Tensor merge_heads(const Tensor& t) {
    Tensor p = permute(t, {0, 2, 1, 3});  // [B,T,h,dh]
    return reshape(p, {p.dim(0), p.dim(1), p.dim(2) * p.dim(3)});
}

// Scaled dot-product attention; k/v batch broadcasts against q batch.
Tensor sdp(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    Tensor qh = split_heads(q, heads);
    Tensor kh = permute(split_heads(k, heads), {0, 1, 3, 2});
    Tensor vh = split_heads(v, heads);
    float scale = 1.0f / std::sqrt(static_cast<float>(qh.dim(-1)));
    Tensor w = softmax(mul(matmul(qh, kh), scale), -1);
    return merge_heads(matmul(w, vh));
}

struct AttnBlock {
    Section section = Section::Mid;
    int heads = 4;
    Norm norm_self;
    Dense q, k, v, out;
    Norm norm_cross;
    Dense cq, ck, cv, cout;
    bool has_xview = false;
    Norm norm_x;
    Dense xpose, xq, xk, xv, xout;

    AttnBlock() = default;
    AttnBlock(Registry& r, const std::string& name, int64_t c, int64_t embed_dim, int heads_,
              int groups, Section sec, bool xview) : section(sec), heads(heads_), has_xview(xview) {
        std::string bn = "base." + name;
        norm_self = Norm(r, bn + ".sa.norm", c, groups);
        q = Dense(r, bn + ".sa.q", c, c);
        k = Dense(r, bn + ".sa.k", c, c);
        v = Dense(r, bn + ".sa.v", c, c);
        out = Dense(r, bn + ".sa.out", c, c);
        norm_cross = Norm(r, bn + ".ca.norm", c, groups);
        cq = Dense(r, bn + ".ca.q", c, c);
        ck = Dense(r, bn + ".ca.k", embed_dim, c);
        cv = Dense(r, bn + ".ca.v", embed_dim, c);
        cout = Dense(r, bn + ".ca.out", c, c);
        if (xview) {
            std::string xn = "xview." + name + ".xa";
            norm_x = Norm(r, xn + ".norm", c, groups);
            xpose = Dense(r, xn + ".pose", 4, c);
            xq = Dense(r, xn + ".q", c, c);
            xk = Dense(r, xn + ".k", c, c);
            xv = Dense(r, xn + ".v", c, c);
            xout = Dense(r, xn + ".out", c, c, /*zero_init=*/true);
        }
    }

    // ctx: [S,1,d] condition tokens; pose4: [S,4] pose encodings
    Tensor forward(Tensor x, const Tensor& ctx, const Tensor& pose4, bool ssa_here,
                   bool use_xview) const {
        int64_t H = x.dim(2), W = x.dim(3);
        int64_t S = x.dim(0);
        {
            Tensor t = to_tokens(norm_self(x));
            Tensor qq = q(t);
            // shared self-attention: every stream queries the condition
            // stream's keys/values (the condition stream is last)
            Tensor src = ssa_here ? slice(t, 0, S - 1, 1) : t;
            Tensor o = sdp(qq, k(src), v(src), heads);
            x = add(x, from_tokens(out(o), H, W));
        }
        {
            Tensor t = to_tokens(norm_cross(x));
            Tensor o = sdp(cq(t), ck(ctx), cv(ctx), heads);
            x = add(x, from_tokens(cout(o), H, W));
        }
        if (has_xview && use_xview) {
            Tensor t = to_tokens(norm_x(x));
            Tensor pe = xpose(pose4);  // [S,C]
            t = add(t, reshape(pe, {S, 1, pe.dim(1)}));
            Tensor tv = permute(t, {1, 0, 2});  // [T,S,C]: attention across streams
            Tensor o = sdp(xq(tv), xk(tv), xv(tv), heads);
            Tensor delta = permute(xout(o), {1, 0, 2});
            x = add(x, from_tokens(delta, H, W));
        }
        return x;
    }
};

Tensor timestep_embedding(int t, int dim) {
    int half = dim / 2;
    std::vector<float> e(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        double arg = t * freq;
        e[static_cast<size_t>(i)] = static_cast<float>(std::cos(arg));
        e[static_cast<size_t>(half + i)] = static_cast<float>(std::sin(arg));
    }
    return Tensor::from({dim}, std::move(e));
}

constexpr uint32_t kModelMetaVersion = 1;

}  // namespace

struct UNetImpl {
    UNetConfig cfg;
    Registry reg;

    Dense time1, time2;
    Conv enc1, enc2, enc3;
    Dense enc_proj;
    Tensor null_embedding, null_image;
    Conv conv_in;
    std::vector<ResBlock> down_res;
    std::vector<std::optional<AttnBlock>> down_attn;
    std::vector<Conv> down_sample;
    ResBlock mid1, mid2;
    AttnBlock mid_attn;
    std::vector<ResBlock> up_res;
    std::vector<std::optional<AttnBlock>> up_attn;
    std::vector<Conv> up_conv;
    Norm out_norm;
    Conv conv_out;

    UNetImpl(const UNetConfig& c, uint64_t seed) : cfg(c), reg(seed) {
        cfg.validate();
        int levels = static_cast<int>(cfg.channel_mults.size());
        int64_t C = cfg.base_channels;
        int64_t temb_dim = 4 * C;
        auto ch = [&](int l) { return C * cfg.channel_mults[static_cast<size_t>(l)]; };

        time1 = Dense(reg, "base.time.1", C, temb_dim);
        time2 = Dense(reg, "base.time.2", temb_dim, temb_dim);

        enc1 = Conv(reg, "base.enc.1", 3, C, 3, 2, 1);
        enc2 = Conv(reg, "base.enc.2", C, 2 * C, 3, 2, 1);
        enc3 = Conv(reg, "base.enc.3", 2 * C, 4 * C, 3, 2, 1);
        enc_proj = Dense(reg, "base.enc.proj", 4 * C + 4, cfg.embed_dim);
        null_embedding = reg.add("base.null_embedding", {cfg.embed_dim}, 0.01f);
        null_image = reg.add("base.null_image", {3}, 0.0f);

        conv_in = Conv(reg, "base.conv_in", 6, C, 3, 1, 1);

        for (int l = 0; l < levels; ++l) {
            int64_t cin = (l == 0) ? C : ch(l - 1);
            std::string dn = "base.down" + std::to_string(l);
            down_res.emplace_back(reg, dn + ".res", cin, ch(l), temb_dim, cfg.norm_groups);
            if (cfg.level_has_attn(l))
                down_attn.emplace_back(AttnBlock(reg, "down" + std::to_string(l), ch(l), cfg.embed_dim,
                                                 cfg.heads, cfg.norm_groups, Section::Encoder,
                                                 cfg.cross_view));
            else
                down_attn.emplace_back(std::nullopt);
            if (l < levels - 1)
                down_sample.emplace_back(reg, dn + ".down", ch(l), ch(l), 3, 2, 1);
        }

        int64_t cm = ch(levels - 1);
        mid1 = ResBlock(reg, "base.mid.res1", cm, cm, temb_dim, cfg.norm_groups);
        mid_attn = AttnBlock(reg, "mid", cm, cfg.embed_dim, cfg.heads, cfg.norm_groups, Section::Mid,
                             cfg.cross_view);
        mid2 = ResBlock(reg, "base.mid.res2", cm, cm, temb_dim, cfg.norm_groups);

        up_res.resize(static_cast<size_t>(levels));
        up_attn.resize(static_cast<size_t>(levels));
        up_conv.resize(static_cast<size_t>(levels));
        for (int l = levels - 1; l >= 0; --l) {
            std::string un = "base.up" + std::to_string(l);
            up_res[static_cast<size_t>(l)] =
                ResBlock(reg, un + ".res", 2 * ch(l), ch(l), temb_dim, cfg.norm_groups);
            if (cfg.level_has_attn(l))
                up_attn[static_cast<size_t>(l)] =
                    AttnBlock(reg, "up" + std::to_string(l), ch(l), cfg.embed_dim, cfg.heads,
                              cfg.norm_groups, Section::Decoder, cfg.cross_view);
            if (l > 0) up_conv[static_cast<size_t>(l)] = Conv(reg, un + ".up", ch(l), ch(l - 1), 3, 1, 1);
        }

        out_norm = Norm(reg, "base.out.norm", C, cfg.norm_groups);
        conv_out = Conv(reg, "base.out.conv", C, 3, 3, 1, 1, /*zero_init=*/true);
    }

    // condition embedding rows for the given poses: [n, embed_dim]
    Tensor embed(const Tensor& cond_image, const std::vector<RelativePose>& poses,
                 bool drop) const {
        int64_t n = static_cast<int64_t>(poses.size());
        if (drop) {
            Tensor rows = add(Tensor::zeros({n, cfg.embed_dim}),
                              reshape(null_embedding, {1, cfg.embed_dim}));
            return rows;
        }
        Tensor x = reshape(cond_image, {1, 3, cond_image.dim(1), cond_image.dim(2)});
        x = silu(enc1(x));
        x = silu(enc2(x));
        x = silu(enc3(x));
        Tensor pooled = mean_axis(reshape(x, {1, x.dim(1), x.dim(2) * x.dim(3)}), 2);  // [1,4C]
        Tensor feat = add(Tensor::zeros({n, pooled.dim(1)}), pooled);  // broadcast rows
        std::vector<float> pv;
        pv.reserve(static_cast<size_t>(n) * 4);
        for (const auto& p : poses) {
            auto e = p.encode();
            pv.insert(pv.end(), e.begin(), e.end());
        }
        Tensor pose = Tensor::from({n, 4}, std::move(pv));
        return enc_proj(concat({feat, pose}, 1));  // [n, embed_dim]
    }

    Tensor forward(const ViewBatch& batch, bool drop, const ForwardOptions& opts) const {
        if (batch.noisy.rank() != 4 || batch.noisy.dim(1) != 3)
            throw ShapeError("predict_noise: noisy views must be [n,3,H,W], got " +
                             shape_str(batch.noisy.shape()));
        int64_t n = batch.noisy.dim(0);
        int64_t H = batch.noisy.dim(2), W = batch.noisy.dim(3);
        if (H != cfg.resolution || W != cfg.resolution)
            throw ShapeError("predict_noise: resolution " + std::to_string(H) + "x" +
                             std::to_string(W) + " does not match model resolution " +
                             std::to_string(cfg.resolution));
        if (batch.cond_image.rank() != 3 || batch.cond_image.dim(0) != 3 ||
            batch.cond_image.dim(1) != H || batch.cond_image.dim(2) != W)
            throw ShapeError("predict_noise: condition image must be [3,H,W]");
        if (static_cast<int64_t>(batch.rel_poses.size()) != n)
            throw ShapeError("predict_noise: rel_poses length " +
                             std::to_string(batch.rel_poses.size()) + " != view count " +
                             std::to_string(n));
        if (batch.timestep < 1 || batch.timestep > 1000)
            throw ParamError("predict_noise: timestep " + std::to_string(batch.timestep) +
                             " outside [1,1000]");

        SsaPlacement ssa = opts.use_ssa ? opts.ssa_override.value_or(cfg.ssa) : SsaPlacement::Off;
        bool cond_stream = ssa != SsaPlacement::Off;
        bool xview = cfg.cross_view && opts.use_cross_view;
        int64_t S = n + (cond_stream ? 1 : 0);

        Tensor cond = drop ? add(Tensor::zeros({static_cast<int64_t>(3), H, W}),
                                 reshape(null_image, {3, 1, 1}))
                           : batch.cond_image;
        Tensor cond_b = reshape(cond, {1, 3, H, W});

        std::vector<Tensor> ins;
        ins.reserve(static_cast<size_t>(S));
        for (int64_t i = 0; i < n; ++i)
            ins.push_back(concat({slice(batch.noisy, 0, i, 1), cond_b}, 1));
        if (cond_stream) ins.push_back(concat({cond_b, cond_b}, 1));
        Tensor x = concat(ins, 0);  // [S,6,H,W]

        // condition tokens and pose encodings per stream
        std::vector<RelativePose> poses = batch.rel_poses;
        if (cond_stream) poses.push_back(RelativePose{});  // identity for the condition stream
        Tensor ctx = reshape(embed(cond, poses, drop), {S, 1, cfg.embed_dim});
        Tensor pose4;
        if (drop) {
            pose4 = Tensor::zeros({S, 4});
        } else {
            std::vector<float> pv;
            pv.reserve(static_cast<size_t>(S) * 4);
            for (const auto& p : poses) {
                auto e = p.encode();
                pv.insert(pv.end(), e.begin(), e.end());
            }
            pose4 = Tensor::from({S, 4}, std::move(pv));
        }

        Tensor temb = time1(reshape(timestep_embedding(batch.timestep, cfg.base_channels),
                                    {1, cfg.base_channels}));
        temb = time2(silu(temb));               // [1, 4C]
        temb = reshape(temb, {temb.numel()});   // [4C]

        int levels = static_cast<int>(cfg.channel_mults.size());
        Tensor h = conv_in(x);
        std::vector<Tensor> skips;
        for (int l = 0; l < levels; ++l) {
            h = down_res[static_cast<size_t>(l)].forward(h, temb);
            if (down_attn[static_cast<size_t>(l)])
                h = down_attn[static_cast<size_t>(l)]->forward(
                    h, ctx, pose4, ssa_active(ssa, Section::Encoder), xview);
            skips.push_back(h);
            if (l < levels - 1) h = down_sample[static_cast<size_t>(l)](h);
        }

        h = mid1.forward(h, temb);
        h = mid_attn.forward(h, ctx, pose4, ssa_active(ssa, Section::Mid), xview);
        h = mid2.forward(h, temb);

        for (int l = levels - 1; l >= 0; --l) {
            h = concat({h, skips[static_cast<size_t>(l)]}, 1);
            h = up_res[static_cast<size_t>(l)].forward(h, temb);
            if (up_attn[static_cast<size_t>(l)])
                h = up_attn[static_cast<size_t>(l)]->forward(
                    h, ctx, pose4, ssa_active(ssa, Section::Decoder), xview);
            if (l > 0) h = up_conv[static_cast<size_t>(l)](upsample_nearest2x(h));
        }

        h = conv_out(silu(out_norm(h)));
        return slice(h, 0, 0, n);  // drop the condition stream's output
    }
};

UNet::UNet(const UNetConfig& cfg, uint64_t seed) : impl_(std::make_unique<UNetImpl>(cfg, seed)) {}
UNet::~UNet() = default;
UNet::UNet(UNet&&) noexcept = default;
UNet& UNet::operator=(UNet&&) noexcept = default;

const UNetConfig& UNet::config() const { return impl_->cfg; }

Tensor UNet::predict_noise(const ViewBatch& batch, bool drop, const ForwardOptions& opts) const {
    return impl_->forward(batch, drop, opts);
}

Tensor UNet::encode_condition(const Tensor& cond_image, const std::vector<RelativePose>& poses,
                              bool drop) const {
    return impl_->embed(cond_image, poses, drop);
}

NamedTensors UNet::parameters(ParamGroup group) const {
    if (group == ParamGroup::All) return impl_->reg.params;
    NamedTensors out;
    for (const auto& [name, t] : impl_->reg.params) {
        bool xv = name.rfind("xview.", 0) == 0;
        if ((group == ParamGroup::CrossViewOnly) == xv) out.emplace_back(name, t);
    }
    return out;
}

void UNet::set_trainable(ParamGroup group) {
    for (auto& [name, t] : impl_->reg.params) {
        bool xv = name.rfind("xview.", 0) == 0;
        bool on = group == ParamGroup::All || ((group == ParamGroup::CrossViewOnly) == xv);
        Tensor(t).set_requires_grad(on);
    }
}

void UNet::load_parameters(const NamedTensors& named) {
    std::map<std::string, Tensor> have;
    for (const auto& [name, t] : named) have.emplace(name, t);
    for (auto& [name, t] : impl_->reg.params) {
        auto it = have.find(name);
        if (it == have.end()) throw IoError("load_parameters: missing parameter " + name);
        if (it->second.shape() != t.shape())
            throw IoError("load_parameters: shape mismatch for " + name + ": " +
                          shape_str(it->second.shape()) + " vs " + shape_str(t.shape()));
        std::memcpy(Tensor(t).data(), it->second.data(),
                    static_cast<size_t>(t.numel()) * sizeof(float));
    }
}

void UNet::save(const std::string& path) const {
    NamedTensors out;
    const UNetConfig& c = impl_->cfg;
    std::vector<float> meta = {static_cast<float>(kModelMetaVersion),
                               static_cast<float>(c.resolution),
                               static_cast<float>(c.base_channels),
                               static_cast<float>(c.channel_mults.size())};
    for (int m : c.channel_mults) meta.push_back(static_cast<float>(m));
    meta.push_back(static_cast<float>(c.attn_levels.size()));
    for (int a : c.attn_levels) meta.push_back(static_cast<float>(a));
    meta.push_back(static_cast<float>(c.embed_dim));
    meta.push_back(static_cast<float>(c.heads));
    meta.push_back(static_cast<float>(c.norm_groups));
    meta.push_back(static_cast<float>(static_cast<int>(c.ssa)));
    meta.push_back(c.cross_view ? 1.0f : 0.0f);
    int64_t meta_len = static_cast<int64_t>(meta.size());
    out.emplace_back("meta.config", Tensor::from({meta_len}, std::move(meta)));
    for (const auto& p : impl_->reg.params) out.push_back(p);
    save_checkpoint(path, out);
}

UNet UNet::load(const std::string& path) {
    NamedTensors all = load_checkpoint(path);
    const Tensor* meta = nullptr;
    for (const auto& [name, t] : all)
        if (name == "meta.config") meta = &t;
    if (!meta) throw IoError("checkpoint " + path + ": missing meta.config record");
    const float* m = meta->data();
    size_t i = 0;
    auto next = [&] { return static_cast<int>(m[i++]); };
    int version = next();
    if (version != static_cast<int>(kModelMetaVersion))
        throw IoError("checkpoint " + path + ": unsupported model meta version");
    UNetConfig cfg;
    cfg.resolution = next();
    cfg.base_channels = next();
    int nl = next();
    cfg.channel_mults.clear();
    for (int l = 0; l < nl; ++l) cfg.channel_mults.push_back(next());
    int na = next();
    cfg.attn_levels.clear();
    for (int a = 0; a < na; ++a) cfg.attn_levels.push_back(next());
    cfg.embed_dim = next();
    cfg.heads = next();
    cfg.norm_groups = next();
    cfg.ssa = static_cast<SsaPlacement>(next());
    cfg.cross_view = next() != 0;

    UNet model(cfg, 0);
    NamedTensors weights;
    for (auto& [name, t] : all)
        if (name != "meta.config") weights.emplace_back(name, t);
    model.load_parameters(weights);
    return model;
}

UNet UNet::extend_with_cross_view(const UNet& base, uint64_t seed) {
    if (base.config().cross_view)
        throw UsageError("extend_with_cross_view: model already has cross-view layers");
    UNetConfig cfg = base.config();
    cfg.cross_view = true;
    UNet out(cfg, seed);
    out.load_parameters_partial_base(base.parameters(ParamGroup::Base));
    return out;
}

// private helper surfaced through a member to keep load_parameters strict
void UNet::load_parameters_partial_base(const NamedTensors& named) {
    std::map<std::string, Tensor> have;
    for (const auto& [name, t] : named) have.emplace(name, t);
    for (auto& [name, t] : impl_->reg.params) {
        if (name.rfind("xview.", 0) == 0) continue;
        auto it = have.find(name);
        if (it == have.end()) throw IoError("extend_with_cross_view: missing base parameter " + name);
        if (it->second.shape() != t.shape())
            throw IoError("extend_with_cross_view: shape mismatch for " + name);
        std::memcpy(Tensor(t).data(), it->second.data(),
                    static_cast<size_t>(t.numel()) * sizeof(float));
    }
}

}  // namespace c123
