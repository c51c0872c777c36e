#pragma once

#include <cstdint>
#include <vector>

#include "c123/camera.hpp"
#include "c123/image.hpp"

namespace c123 {

// Procedural object: a union of 2-5 colored primitives whose union fits well
// inside the unit ball, so a camera at the default radius always frames the
// whole object.
struct Primitive {
    enum class Kind { Sphere, Box, Capsule };
    Kind kind = Kind::Sphere;
    Vec3 center;
    double radius = 0.3;   // sphere and capsule
    Vec3 half{0.2, 0.2, 0.2};  // box half extents
    double yaw = 0.0;      // box rotation about +z
    Vec3 axis{0, 0, 1};    // capsule axis (unit)
    double half_len = 0.2; // capsule half length
    Vec3 color{0.8, 0.2, 0.2};

    // conservative distance from the origin to the farthest surface point
    double bound() const;
};

struct SceneSpec {
    uint64_t seed = 0;
    std::vector<Primitive> prims;

    // signed distance of the union and the color of the nearest primitive
    double sdf(const Vec3& p) const;
    const Primitive& nearest(const Vec3& p) const;
    // the same object rigidly rotated about +z (used by equivariance checks)
    SceneSpec rotated_z(double angle) const;
};

// Deterministic per seed; 2-5 primitives, union inside the unit ball, at
// least two clearly distinct colors.
SceneSpec generate_scene(uint64_t seed);

struct RenderParams {
    double fov_rad = 0.8726646259971648;  // 50 degrees
    int max_steps = 64;
    double hit_eps = 1e-3;
    // far plane = far_factor * camera radius
    double far_factor = 2.0;
    // rays per pixel edge (2 -> 2x2 supersampling)
    int supersample = 2;
};

struct ViewRecord {
    Image image;
    SphericalPose pose;
};

// Sphere-traced rendering with headlight Lambertian shading on a white
// background. Pure function of (scene, pose, resolution).
Image render_view(const SceneSpec& scene, const SphericalPose& pose, int res,
                  const RenderParams& params = {});

// Views along the circular-perturbation pose protocol.
std::vector<ViewRecord> render_object(const SceneSpec& scene, int n_views, uint64_t seed, int res,
                                      const RenderParams& params = {});

// Fraction of pixels that are pure background.
double white_fraction(const Image& img);

}  // namespace c123
