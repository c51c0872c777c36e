#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "c123/camera.hpp"
#include "c123/errors.hpp"

using namespace c123;

namespace {
constexpr double kPi = 3.14159265358979323846;
double deg(double d) { return d * kPi / 180.0; }
}  // namespace

TEST_CASE("relative_pose identity and wraparound") {
    SphericalPose p(deg(85), deg(40), 2.2);
    RelativePose r = relative_pose(p, p);
    CHECK(r.d_polar == 0.0);
    CHECK(r.sin_d_azimuth == doctest::Approx(0.0));
    CHECK(r.cos_d_azimuth == doctest::Approx(1.0));
    CHECK(r.d_radius == 0.0);

    // azimuths 350 deg -> 10 deg is a +20 deg delta, not -340
    SphericalPose a(deg(90), deg(350), 2.2);
    SphericalPose b(deg(90), deg(10), 2.2);
    RelativePose d = relative_pose(a, b);
    CHECK(std::atan2(d.sin_d_azimuth, d.cos_d_azimuth) == doctest::Approx(deg(20)).epsilon(1e-9));
}

TEST_CASE("relative_pose round-trips through apply_relative") {
    Rng rng(501);
    for (int i = 0; i < 200; ++i) {
        SphericalPose cond(rng.uniform(deg(10), deg(170)), rng.uniform(0, 2 * kPi),
                           rng.uniform(1.5, 3.0));
        SphericalPose target(rng.uniform(deg(10), deg(170)), rng.uniform(0, 2 * kPi),
                             rng.uniform(1.5, 3.0));
        RelativePose r = relative_pose(cond, target);
        CHECK(r.sin_d_azimuth * r.sin_d_azimuth + r.cos_d_azimuth * r.cos_d_azimuth ==
              doctest::Approx(1.0).epsilon(1e-6));
        SphericalPose back = apply_relative(cond, r);
        CHECK(back.polar == doctest::Approx(target.polar).epsilon(1e-6));
        CHECK(std::fabs(wrap_pi(back.azimuth - target.azimuth)) < 1e-6);
        CHECK(back.radius == doctest::Approx(target.radius).epsilon(1e-6));
    }
}

TEST_CASE("relative_pose is invariant to a common azimuth rotation") {
    Rng rng(502);
    for (int i = 0; i < 100; ++i) {
        SphericalPose cond(rng.uniform(deg(20), deg(160)), rng.uniform(0, 2 * kPi), 2.2);
        SphericalPose target(rng.uniform(deg(20), deg(160)), rng.uniform(0, 2 * kPi), 2.2);
        double shift = rng.uniform(0, 2 * kPi);
        RelativePose r1 = relative_pose(cond, target);
        RelativePose r2 = relative_pose(SphericalPose(cond.polar, cond.azimuth + shift, cond.radius),
                                        SphericalPose(target.polar, target.azimuth + shift, target.radius));
        CHECK(r1.d_polar == doctest::Approx(r2.d_polar).epsilon(1e-9));
        CHECK(r1.sin_d_azimuth == doctest::Approx(r2.sin_d_azimuth).epsilon(1e-6));
        CHECK(r1.cos_d_azimuth == doctest::Approx(r2.cos_d_azimuth).epsilon(1e-6));
    }
}

TEST_CASE("circular_pose_sequence closes the circle with bounded gaps") {
    auto poses = circular_pose_sequence(18, 77);
    REQUIRE(poses.size() == 18);
    // gaps sum to exactly 360 degrees
    double sum = 0;
    for (size_t i = 0; i < poses.size(); ++i) {
        double next = (i + 1 < poses.size()) ? poses[i + 1].azimuth : poses[0].azimuth + 2 * kPi;
        double gap = next - poses[i].azimuth;
        CHECK(gap > 0);
        sum += gap;
    }
    CHECK(sum == doctest::Approx(2 * kPi).epsilon(1e-9));
    // all polar angles within [75,105] degrees
    for (const auto& p : poses) {
        CHECK(p.polar >= deg(75) - 1e-12);
        CHECK(p.polar <= deg(105) + 1e-12);
    }
    // strictly increasing azimuths
    for (size_t i = 1; i < poses.size(); ++i) CHECK(poses[i].azimuth > poses[i - 1].azimuth);

    // determinism
    auto again = circular_pose_sequence(18, 77);
    for (size_t i = 0; i < poses.size(); ++i) {
        CHECK(poses[i].polar == again[i].polar);
        CHECK(poses[i].azimuth == again[i].azimuth);
    }
    // different seed differs
    auto other = circular_pose_sequence(18, 78);
    bool any_diff = false;
    for (size_t i = 0; i < poses.size(); ++i) any_diff |= (poses[i].azimuth != other[i].azimuth);
    CHECK(any_diff);
}

TEST_CASE("circular_pose_sequence max gap bound after rescale") {
    // invariant: max gap <= 30 deg * rescale factor (+ tiny epsilon)
    for (uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        for (int n : {8, 18, 36}) {
            auto poses = circular_pose_sequence(n, seed, {});
            double max_gap = 0, min_gap = 1e9;
            for (int i = 0; i < n; ++i) {
                double next = (i + 1 < n) ? poses[static_cast<size_t>(i + 1)].azimuth
                                          : poses[0].azimuth + 2 * kPi;
                double gap = next - poses[static_cast<size_t>(i)].azimuth;
                max_gap = std::max(max_gap, gap);
                min_gap = std::min(min_gap, gap);
            }
            // raw gaps in [10,30] then scaled by a common factor: the ratio
            // of max to min gap can never exceed 3
            CHECK(max_gap / min_gap <= 3.0 + 1e-9);
        }
    }
}

TEST_CASE("circular_pose_sequence parameter errors") {
    CHECK_THROWS_AS(circular_pose_sequence(1, 5), ParamError);
    // enough views to squeeze the minimum gap below 1 degree
    CHECK_THROWS_AS(circular_pose_sequence(500, 5), ParamError);
}

TEST_CASE("camera_rays: center ray hits the origin, directions unit") {
    SphericalPose pose(deg(80), deg(33), 2.2);
    int H = 17, W = 17;  // odd so there is an exact center pixel
    auto rays = camera_rays(pose, H, W, deg(50));
    REQUIRE(rays.size() == static_cast<size_t>(H * W));
    for (const auto& r : rays) CHECK(r.dir.norm() == doctest::Approx(1.0).epsilon(1e-6));

    const Ray& center = rays[static_cast<size_t>((H / 2) * W + W / 2)];
    // point at parameter t = radius is the origin
    Vec3 at = center.origin + center.dir * pose.radius;
    CHECK(at.norm() < 1e-6);
}

TEST_CASE("camera_rays: horizontally mirrored pixels have mirrored components") {
    SphericalPose pose(deg(95), deg(123), 2.2);
    int H = 8, W = 8;
    auto rays = camera_rays(pose, H, W, deg(50));
    Vec3 eye = pose.position();
    Vec3 fwd = (Vec3{0, 0, 0} - eye).normalized();
    Vec3 right = fwd.cross(Vec3{0, 0, 1}).normalized();
    Vec3 up = right.cross(fwd);
    for (int j = 0; j < H; ++j)
        for (int i = 0; i < W / 2; ++i) {
            const Vec3& d1 = rays[static_cast<size_t>(j * W + i)].dir;
            const Vec3& d2 = rays[static_cast<size_t>(j * W + (W - 1 - i))].dir;
            CHECK(d1.dot(right) == doctest::Approx(-d2.dot(right)).epsilon(1e-9));
            CHECK(d1.dot(up) == doctest::Approx(d2.dot(up)).epsilon(1e-9));
            CHECK(d1.dot(fwd) == doctest::Approx(d2.dot(fwd)).epsilon(1e-9));
        }
}

TEST_CASE("camera_rays golden ordering: first ray is the top-left pixel") {
    // fixes the index convention: row-major from the top-left, y down
    SphericalPose pose(deg(90), 0.0, 2.0);  // camera on +x axis looking at origin
    auto rays = camera_rays(pose, 4, 4, deg(60));
    // right = forward x up points along +y, so image-left (pixel 0) is -y
    const Vec3 d = rays[0].dir;
    CHECK(d.z > 0);  // top row tilts up in world
    CHECK(d.y < 0);
    // bottom-right mirrors both
    const Vec3 e = rays[15].dir;
    CHECK(e.z < 0);
    CHECK(e.y > 0);

    CHECK_THROWS_AS(camera_rays(pose, 4, 4, 0.0), ParamError);
    CHECK_THROWS_AS(camera_rays(pose, 4, 4, kPi), ParamError);
}

TEST_CASE("pose degenerate inputs") {
    CHECK_THROWS_AS(SphericalPose(-0.1, 0, 2.2), ParamError);
    CHECK_THROWS_AS(SphericalPose(1.0, 0, 0.0), ParamError);
    CHECK_NOTHROW(SphericalPose(0.0, 0, 1.0));
    // pole-on camera still produces valid rays via the fallback up vector
    auto rays = camera_rays(SphericalPose(0.0, 0, 2.0), 4, 4, deg(50));
    for (const auto& r : rays) CHECK(std::isfinite(r.dir.x + r.dir.y + r.dir.z));
}
