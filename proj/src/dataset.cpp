#include "c123/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "c123/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c123 {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string view_filename(const std::string& object_id, size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%02zu.png", k);
    return object_id + "/" + buf;
}
}  // namespace

ObjectEntry write_object_views(const std::string& dir, const std::string& object_id,
                               uint64_t scene_seed, bool has_seed, const std::string& split,
                               const std::vector<ViewRecord>& records) {
    fs::create_directories(fs::path(dir) / object_id);
    ObjectEntry entry;
    entry.id = object_id;
    entry.seed = scene_seed;
    entry.has_seed = has_seed;
    entry.split = split;
    for (size_t k = 0; k < records.size(); ++k) {
        std::string rel = view_filename(object_id, k);
        write_png((fs::path(dir) / rel).string(), records[k].image);
        entry.views.push_back({rel, records[k].pose});
    }
    return entry;
}

void save_manifest(const std::string& dir, const DatasetManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["resolution"] = m.resolution;
    j["fov_degrees"] = m.fov_deg;
    json objs = json::array();
    for (const auto& o : m.objects) {
        json jo;
        jo["id"] = o.id;
        if (o.has_seed) jo["seed"] = o.seed;
        if (!o.split.empty()) jo["split"] = o.split;
        json views = json::array();
        for (const auto& v : o.views) {
            views.push_back({{"file", v.file},
                             {"polar", v.pose.polar * 180.0 / kPi},
                             {"azimuth", v.pose.azimuth * 180.0 / kPi},
                             {"radius", v.pose.radius}});
        }
        jo["views"] = std::move(views);
        objs.push_back(std::move(jo));
    }
    j["objects"] = std::move(objs);

    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot write manifest in " + dir);
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir) {
    fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream f(mpath);
    if (!f) throw IoError("missing manifest: " + mpath.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
    }

    DatasetManifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kDatasetFormatVersion)
            throw IoError("manifest " + mpath.string() + ": unsupported format version " +
                          std::to_string(m.format_version));
        m.resolution = j.at("resolution").get<int>();
        m.fov_deg = j.at("fov_degrees").get<double>();
        for (const auto& jo : j.at("objects")) {
            ObjectEntry o;
            o.id = jo.at("id").get<std::string>();
            if (jo.contains("seed")) {
                o.seed = jo.at("seed").get<uint64_t>();
                o.has_seed = true;
            }
            if (jo.contains("split")) o.split = jo.at("split").get<std::string>();
            for (const auto& jv : jo.at("views")) {
                ViewEntry v;
                v.file = jv.at("file").get<std::string>();
                v.pose = SphericalPose(jv.at("polar").get<double>() * kPi / 180.0,
                                       jv.at("azimuth").get<double>() * kPi / 180.0,
                                       jv.at("radius").get<double>());
                o.views.push_back(std::move(v));
            }
            m.objects.push_back(std::move(o));
        }
    } catch (const json::exception& e) {
        throw IoError("manifest " + mpath.string() + ": " + e.what());
    }

    // validation: referenced files exist with the declared resolution
    for (const auto& o : m.objects)
        for (const auto& v : o.views) {
            fs::path p = fs::path(dir) / v.file;
            if (!fs::exists(p)) throw IoError("manifest references missing file: " + p.string());
        }
    if (!m.objects.empty() && !m.objects.front().views.empty()) {
        Image probe = read_png((fs::path(dir) / m.objects.front().views.front().file).string());
        if (probe.width != m.resolution || probe.height != m.resolution)
            throw IoError("dataset " + dir + ": image resolution " + std::to_string(probe.width) +
                          " does not match manifest resolution " + std::to_string(m.resolution));
    }
    return m;
}

Image load_view_image(const std::string& dir, const ViewEntry& view, int expected_res) {
    Image img = read_png((fs::path(dir) / view.file).string());
    if (img.width != expected_res || img.height != expected_res)
        throw IoError("view " + view.file + ": resolution " + std::to_string(img.width) +
                      " does not match expected " + std::to_string(expected_res));
    return img;
}

}  // namespace c123
