#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace c123 {

// Counter-based RNG: every draw is a pure function of (key, counter), so any
// consumer can be replayed or evaluated out of order without shared state.
// Streams are derived from a root seed by name (e.g. "dataset", "train"), and
// further by integer index, so each pipeline stage is independently
// reproducible from the one root seed.
class Rng {
  public:
    explicit Rng(uint64_t key) : key_(key) {}

    // splitmix64 finalizer; full-period mix of a 64-bit word.
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t hash_name(std::string_view name) {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (unsigned char c : name) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static Rng derive(uint64_t seed, std::string_view name) {
        return Rng(mix(seed ^ hash_name(name)));
    }

    static Rng derive(uint64_t seed, std::string_view name, uint64_t index) {
        return Rng(mix(mix(seed ^ hash_name(name)) + index));
    }

    uint64_t next_u64() { return mix(key_ + 0x632be59bd9b4e019ull * ++counter_); }

    // [0,1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // i in [0, n)
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float normalf() { return static_cast<float>(normal()); }

    // Stateless draws, usable without an Rng instance.
    static double uniform_at(uint64_t key, uint64_t counter) {
        return static_cast<double>(mix(key + 0x632be59bd9b4e019ull * (counter + 1)) >> 11) * 0x1.0p-53;
    }

    uint64_t key() const { return key_; }

  private:
    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace c123
