#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "c123/rng.hpp"

namespace c123 {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const;
    Vec3 normalized() const;
};

// Camera position on a sphere around the origin; the camera looks at the
// origin with +z up. polar is measured from +z, azimuth from +x toward +y.
struct SphericalPose {
    double polar = 1.5707963267948966;  // radians in [0, pi]
    double azimuth = 0.0;               // radians, normalized into [0, 2pi)
    double radius = 2.2;                // world units, > 0

    SphericalPose() = default;
    SphericalPose(double polar_, double azimuth_, double radius_);

    Vec3 position() const;
};

// Pose delta used as the conditioning signal: spherical offsets from the
// condition camera to a target camera, with the azimuth delta encoded as
// sin/cos of the wrapped angle.
struct RelativePose {
    double d_polar = 0;
    double sin_d_azimuth = 0;
    double cos_d_azimuth = 1;
    double d_radius = 0;

    std::array<float, 4> encode() const {
        return {static_cast<float>(d_polar), static_cast<float>(sin_d_azimuth),
                static_cast<float>(cos_d_azimuth), static_cast<float>(d_radius)};
    }
};

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit
};

// wrap an angle into (-pi, pi]
double wrap_pi(double a);
// wrap an angle into [0, 2pi)
double wrap_2pi(double a);

RelativePose relative_pose(const SphericalPose& cond, const SphericalPose& target);
// Inverse of relative_pose: cond composed with the delta gives the target.
SphericalPose apply_relative(const SphericalPose& cond, const RelativePose& rel);

// The circular-perturbation protocol: n views around the object with azimuth
// gaps drawn uniformly from [10,30] degrees then rescaled to close the circle
// exactly, and polar angles drawn uniformly from [75,105] degrees. Azimuths
// start at 0 and are strictly increasing.
struct PoseSequenceParams {
    double min_gap_deg = 10.0;
    double max_gap_deg = 30.0;
    double min_polar_deg = 75.0;
    double max_polar_deg = 105.0;
    double radius = 2.2;
};
std::vector<SphericalPose> circular_pose_sequence(int n, uint64_t seed,
                                                  const PoseSequenceParams& params = {});

// Pinhole rays through every pixel (row-major, y down in image space),
// optical axis through the world origin.
std::vector<Ray> camera_rays(const SphericalPose& pose, int height, int width, double fov_rad);

}  // namespace c123
