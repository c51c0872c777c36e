#include "c123/camera.hpp"

#include <cmath>

#include "c123/errors.hpp"

namespace c123 {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Vec3::normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
}

double wrap_pi(double a) {
    a = std::fmod(a, kTwoPi);
    if (a > kPi) a -= kTwoPi;
    if (a <= -kPi) a += kTwoPi;
    return a;
}

double wrap_2pi(double a) {
    a = std::fmod(a, kTwoPi);
    if (a < 0) a += kTwoPi;
    return a;
}

SphericalPose::SphericalPose(double polar_, double azimuth_, double radius_)
    : polar(polar_), azimuth(wrap_2pi(azimuth_)), radius(radius_) {
    if (polar < 0.0 || polar > kPi)
        throw ParamError("SphericalPose: polar " + std::to_string(polar_) + " outside [0,pi]");
    if (radius <= 0.0) throw ParamError("SphericalPose: radius must be positive");
}

Vec3 SphericalPose::position() const {
    double sp = std::sin(polar);
    return {radius * sp * std::cos(azimuth), radius * sp * std::sin(azimuth),
            radius * std::cos(polar)};
}

RelativePose relative_pose(const SphericalPose& cond, const SphericalPose& target) {
    RelativePose r;
    r.d_polar = target.polar - cond.polar;
    double da = wrap_pi(target.azimuth - cond.azimuth);
    r.sin_d_azimuth = std::sin(da);
    r.cos_d_azimuth = std::cos(da);
    r.d_radius = target.radius - cond.radius;
    return r;
}

SphericalPose apply_relative(const SphericalPose& cond, const RelativePose& rel) {
    double da = std::atan2(rel.sin_d_azimuth, rel.cos_d_azimuth);
    return SphericalPose(cond.polar + rel.d_polar, wrap_2pi(cond.azimuth + da),
                         cond.radius + rel.d_radius);
}

std::vector<SphericalPose> circular_pose_sequence(int n, uint64_t seed,
                                                  const PoseSequenceParams& p) {
    if (n < 2) throw ParamError("circular_pose_sequence: need at least 2 views, got " + std::to_string(n));
    Rng rng(Rng::mix(seed ^ 0x706f7365u));  // "pose"
    std::vector<double> gaps(static_cast<size_t>(n));
    double total = 0;
    for (auto& g : gaps) {
        g = rng.uniform(p.min_gap_deg, p.max_gap_deg);
        total += g;
    }
    double scale = 360.0 / total;
    // the rescale keeps gaps positive; reject configurations squeezed to
    // degenerate spacing (< 1 degree between neighbors)
    if (p.min_gap_deg * scale < 1.0)
        throw ParamError("circular_pose_sequence: " + std::to_string(n) +
                         " views leaves <1 degree minimum azimuth gap after rescale");
    std::vector<SphericalPose> poses;
    poses.reserve(static_cast<size_t>(n));
    double az = 0.0;
    for (int i = 0; i < n; ++i) {
        double polar_deg = rng.uniform(p.min_polar_deg, p.max_polar_deg);
        poses.emplace_back(polar_deg * kPi / 180.0, az * kPi / 180.0, p.radius);
        az += gaps[static_cast<size_t>(i)] * scale;
    }
    return poses;
}

std::vector<Ray> camera_rays(const SphericalPose& pose, int height, int width, double fov_rad) {
    if (fov_rad <= 0.0 || fov_rad >= kPi)
        throw ParamError("camera_rays: fov must lie in (0, pi), got " + std::to_string(fov_rad));
    Vec3 eye = pose.position();
    Vec3 fwd = (Vec3{0, 0, 0} - eye).normalized();
    Vec3 up{0, 0, 1};
    if (std::fabs(fwd.z) > 1.0 - 1e-12) up = {1, 0, 0};  // pole-on view
    Vec3 right = fwd.cross(up).normalized();
    Vec3 cam_up = right.cross(fwd);

    double tanf = std::tan(fov_rad / 2.0);
    double aspect = static_cast<double>(width) / height;
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(height) * width);
    for (int j = 0; j < height; ++j) {
        double ndc_y = 1.0 - 2.0 * (j + 0.5) / height;
        for (int i = 0; i < width; ++i) {
            double ndc_x = 2.0 * (i + 0.5) / width - 1.0;
            Vec3 d = fwd + right * (ndc_x * tanf * aspect) + cam_up * (ndc_y * tanf);
            rays.push_back({eye, d.normalized()});
        }
    }
    return rays;
}

}  // namespace c123
