#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c123/scene.hpp"

namespace c123 {

// On-disk layout: <dir>/manifest.json plus obj_<id>/view_<k>.png.
// Poses are stored in degrees in the manifest.
inline constexpr int kDatasetFormatVersion = 1;

struct ViewEntry {
    std::string file;  // relative to the dataset dir
    SphericalPose pose;
};

struct ObjectEntry {
    std::string id;
    uint64_t seed = 0;       // SceneSpec seed; 0 when unknown (external sources)
    bool has_seed = false;
    std::string split;       // "train" | "test" | "" (samples)
    std::vector<ViewEntry> views;
};

struct DatasetManifest {
    int format_version = kDatasetFormatVersion;
    int resolution = 32;
    double fov_deg = 50.0;
    std::vector<ObjectEntry> objects;
};

// Writes one object's view images and returns the manifest entries for them.
// The manifest itself is written last via save_manifest.
ObjectEntry write_object_views(const std::string& dir, const std::string& object_id,
                               uint64_t scene_seed, bool has_seed, const std::string& split,
                               const std::vector<ViewRecord>& records);

void save_manifest(const std::string& dir, const DatasetManifest& manifest);

// Parses and validates the manifest; every referenced image must exist and
// match the declared resolution, and the version must be supported.
DatasetManifest load_manifest(const std::string& dir);

// Loads the pixels for one manifest entry.
Image load_view_image(const std::string& dir, const ViewEntry& view, int expected_res);

}  // namespace c123
