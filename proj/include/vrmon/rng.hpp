#pragma once

#include <cmath>
#include <cstdint>

namespace vrmon {

// splitmix64 stream. Self-contained so that seeded runs replay
// bit-identically on any platform or standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t below(uint64_t n) { return n ? next() % n : 0; }

    // uniform in [0, 1)
    double unit() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    double normal(double mean, double sigma) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sigma * spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * unit() - 1.0;
            v = 2.0 * unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return mean + sigma * u * m;
    }

    // derive an independent stream, e.g. one per tree or per flow
    Rng fork() { return Rng(next()); }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace vrmon
