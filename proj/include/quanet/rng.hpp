#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace quanet {

// Counter-based RNG built on splitmix64. Every consumer derives its stream
// from (seed, stream labels) so data order, parameter init, and augmentation
// are reproducible without serializing generator state: the labels (epoch,
// sample index, parameter name) are the state.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
        splitmix64(state_);
    }

    Rng(uint64_t seed, uint64_t stream) : Rng(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1))) {}

    Rng(uint64_t seed, const std::string& label) : Rng(seed, fnv1a(label)) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Box-Muller; hand-rolled so the byte stream is identical across
    // standard library implementations.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // log-uniform integer in [lo, hi], lo >= 1
    int64_t log_uniform_int(int64_t lo, int64_t hi) {
        double llo = std::log(static_cast<double>(lo));
        double lhi = std::log(static_cast<double>(hi) + 1.0);
        double v = std::exp(uniform(llo, lhi));
        int64_t r = static_cast<int64_t>(v);
        if (r < lo) r = lo;
        if (r > hi) r = hi;
        return r;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace quanet
