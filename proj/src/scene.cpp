#include "c123/scene.hpp"

#include <algorithm>
#include <cmath>

#include "c123/errors.hpp"

namespace c123 {

namespace {

double sd_sphere(const Vec3& p, const Vec3& c, double r) { return (p - c).norm() - r; }

double sd_box(const Vec3& p, const Vec3& c, const Vec3& half, double yaw) {
    // rotate into the box frame
    double cs = std::cos(-yaw), sn = std::sin(-yaw);
    Vec3 q = p - c;
    Vec3 l{q.x * cs - q.y * sn, q.x * sn + q.y * cs, q.z};
    Vec3 d{std::fabs(l.x) - half.x, std::fabs(l.y) - half.y, std::fabs(l.z) - half.z};
    Vec3 dpos{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
    return dpos.norm() + std::min(std::max(d.x, std::max(d.y, d.z)), 0.0);
}

double sd_capsule(const Vec3& p, const Vec3& c, const Vec3& axis, double hl, double r) {
    Vec3 a = c - axis * hl;
    Vec3 pa = p - a;
    Vec3 ba = axis * (2.0 * hl);
    double denom = ba.dot(ba);
    double h = denom > 0 ? std::clamp(pa.dot(ba) / denom, 0.0, 1.0) : 0.0;
    return (pa - ba * h).norm() - r;
}

double prim_sdf(const Primitive& pr, const Vec3& p) {
    switch (pr.kind) {
        case Primitive::Kind::Sphere: return sd_sphere(p, pr.center, pr.radius);
        case Primitive::Kind::Box: return sd_box(p, pr.center, pr.half, pr.yaw);
        default: return sd_capsule(p, pr.center, pr.axis, pr.half_len, pr.radius);
    }
}

}  // namespace

double Primitive::bound() const {
    double cn = center.norm();
    switch (kind) {
        case Kind::Sphere: return cn + radius;
        case Kind::Box: return cn + half.norm();
        default: return cn + half_len + radius;
    }
}

double SceneSpec::sdf(const Vec3& p) const {
    double d = 1e30;
    for (const auto& pr : prims) d = std::min(d, prim_sdf(pr, p));
    return d;
}

const Primitive& SceneSpec::nearest(const Vec3& p) const {
    const Primitive* best = &prims.front();
    double bd = 1e30;
    for (const auto& pr : prims) {
        double d = prim_sdf(pr, p);
        if (d < bd) {
            bd = d;
            best = &pr;
        }
    }
    return *best;
}

SceneSpec SceneSpec::rotated_z(double angle) const {
    double cs = std::cos(angle), sn = std::sin(angle);
    auto rot = [&](const Vec3& v) { return Vec3{v.x * cs - v.y * sn, v.x * sn + v.y * cs, v.z}; };
    SceneSpec out;
    out.seed = seed;
    out.prims = prims;
    for (auto& pr : out.prims) {
        pr.center = rot(pr.center);
        pr.axis = rot(pr.axis);
        pr.yaw += angle;
    }
    return out;
}

SceneSpec generate_scene(uint64_t seed) {
    Rng rng(Rng::mix(seed ^ 0x7363656eu));  // "scen"
    SceneSpec scene;
    scene.seed = seed;
    int count = 2 + static_cast<int>(rng.uniform_index(4));  // 2..5

    auto rand_unit = [&] {
        // uniform direction
        double z = rng.uniform(-1.0, 1.0);
        double a = rng.uniform(0.0, 2 * 3.14159265358979323846);
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        return Vec3{r * std::cos(a), r * std::sin(a), z};
    };
    auto rand_color = [&] { return Vec3{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)}; };

    for (int i = 0; i < count; ++i) {
        Primitive pr;
        // first primitive is a large anchor near the center so the object
        // stays clearly visible in frame
        bool anchor = (i == 0);
        double extent = anchor ? rng.uniform(0.35, 0.5) : rng.uniform(0.18, 0.35);
        double max_center = std::max(0.0, 0.85 - extent);
        pr.center = rand_unit() * (rng.uniform(0.0, anchor ? std::min(0.2, max_center) : max_center));
        int kind = static_cast<int>(rng.uniform_index(3));
        if (kind == 0) {
            pr.kind = Primitive::Kind::Sphere;
            pr.radius = extent;
        } else if (kind == 1) {
            pr.kind = Primitive::Kind::Box;
            // half extents scaled so the corner diagonal equals `extent`
            Vec3 h{rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)};
            double hn = h.norm();
            pr.half = h * (extent / hn);
            pr.yaw = rng.uniform(0.0, 2 * 3.14159265358979323846);
        } else {
            pr.kind = Primitive::Kind::Capsule;
            pr.radius = extent * rng.uniform(0.3, 0.5);
            pr.half_len = extent - pr.radius;
            pr.axis = rand_unit();
        }
        pr.color = rand_color();
        scene.prims.push_back(pr);
    }

    // force at least two clearly distinct colors
    if (scene.prims.size() >= 2) {
        auto& c0 = scene.prims[0].color;
        auto& c1 = scene.prims[1].color;
        double dist = std::max({std::fabs(c0.x - c1.x), std::fabs(c0.y - c1.y), std::fabs(c0.z - c1.z)});
        if (dist < 0.2) {
            c1.x = c0.x > 0.5 ? c0.x - 0.45 : c0.x + 0.45;
            c1.y = c0.y > 0.5 ? c0.y - 0.45 : c0.y + 0.45;
        }
    }
    return scene;
}

namespace {

// One sphere-traced sample; white when the ray escapes.
Vec3 trace_shade(const SceneSpec& scene, const Ray& ray, double far, int max_steps,
                 double hit_eps) {
    double t = 0.0;
    bool hit = false;
    Vec3 p;
    for (int s = 0; s < max_steps; ++s) {
        p = ray.origin + ray.dir * t;
        double d = scene.sdf(p);
        if (d < hit_eps) {
            hit = true;
            break;
        }
        t += d;
        if (t > far) break;
    }
    if (!hit) return {1.0, 1.0, 1.0};
    const double h = 1e-4;
    Vec3 n{scene.sdf({p.x + h, p.y, p.z}) - scene.sdf({p.x - h, p.y, p.z}),
           scene.sdf({p.x, p.y + h, p.z}) - scene.sdf({p.x, p.y - h, p.z}),
           scene.sdf({p.x, p.y, p.z + h}) - scene.sdf({p.x, p.y, p.z - h})};
    double nn = n.norm();
    if (nn > 0) n = n * (1.0 / nn);
    // light fixed along +z (the rotation axis): radiance stays
    // view-independent and z-rotation equivariance is preserved
    double lambert = std::max(0.0, n.z);
    double shade = 0.25 + 0.75 * lambert;
    const Vec3& c = scene.nearest(p).color;
    return {std::clamp(c.x * shade, 0.0, 1.0), std::clamp(c.y * shade, 0.0, 1.0),
            std::clamp(c.z * shade, 0.0, 1.0)};
}

}  // namespace

Image render_view(const SceneSpec& scene, const SphericalPose& pose, int res,
                  const RenderParams& params) {
    Image img(res, res, 1.0f);
    if (scene.prims.empty()) return img;
    // 2x2 supersampling: soft silhouettes at the working resolution
    int ss = params.supersample;
    auto rays = camera_rays(pose, res * ss, res * ss, params.fov_rad);
    double far = params.far_factor * pose.radius;
    for (int j = 0; j < res; ++j) {
        for (int i = 0; i < res; ++i) {
            Vec3 acc{0, 0, 0};
            for (int sj = 0; sj < ss; ++sj)
                for (int si = 0; si < ss; ++si) {
                    const Ray& ray =
                        rays[(static_cast<size_t>(j) * ss + sj) * res * ss + i * ss + si];
                    acc = acc + trace_shade(scene, ray, far, params.max_steps, params.hit_eps);
                }
            double inv = 1.0 / (ss * ss);
            float* px = img.px(j, i);
            px[0] = static_cast<float>(acc.x * inv);
            px[1] = static_cast<float>(acc.y * inv);
            px[2] = static_cast<float>(acc.z * inv);
        }
    }
    return img;
}

std::vector<ViewRecord> render_object(const SceneSpec& scene, int n_views, uint64_t seed, int res,
                                      const RenderParams& params) {
    if (n_views < 2) throw ParamError("render_object: need at least 2 views");
    auto poses = circular_pose_sequence(n_views, seed);
    std::vector<ViewRecord> records;
    records.reserve(poses.size());
    for (const auto& pose : poses) records.push_back({render_view(scene, pose, res, params), pose});
    return records;
}

double white_fraction(const Image& img) {
    int64_t white = 0, total = static_cast<int64_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float* p = img.px(y, x);
            if (p[0] == 1.0f && p[1] == 1.0f && p[2] == 1.0f) ++white;
        }
    return static_cast<double>(white) / static_cast<double>(total);
}

}  // namespace c123
