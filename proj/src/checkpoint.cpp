#include "c123/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "c123/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes little-endian host");

namespace c123 {

namespace {

template <class T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f, const std::string& path) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw IoError("checkpoint " + path + ": truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write("C123", 4);
    put<uint32_t>(f, kCheckpointVersion);
    put<uint64_t>(f, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(f, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) put<uint64_t>(f, static_cast<uint64_t>(d));
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel()) * sizeof(float));
    }
    if (!f) throw IoError("write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "C123", 4) != 0)
        throw IoError("checkpoint " + path + ": bad magic");
    uint32_t version = get<uint32_t>(f, path);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint " + path + ": unsupported version " + std::to_string(version));
    uint64_t count = get<uint64_t>(f, path);
    NamedTensors out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t nl = get<uint32_t>(f, path);
        std::string name(nl, '\0');
        f.read(name.data(), nl);
        uint32_t rank = get<uint32_t>(f, path);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(get<uint64_t>(f, path));
        int64_t n = numel_of(shape);
        std::vector<float> data(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(data.data()), n * static_cast<int64_t>(sizeof(float)));
        if (!f) throw IoError("checkpoint " + path + ": truncated record " + name);
        out.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
    }
    return out;
}

}  // namespace c123
