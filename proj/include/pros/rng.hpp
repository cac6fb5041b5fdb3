#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace pros {

// splitmix64 finalizer; used to derive independent seed streams from a root
// seed plus a path of tags, so reordering or parallelising consumers cannot
// change any stream.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
    uint64_t s = splitmix64(root);
    for (uint64_t p : path) {
        s = splitmix64(s ^ (p + 0x9e3779b97f4a7c15ULL));
    }
    return s;
}

// mt19937_64 is bit-exact across platforms; the value mappings below are
// hand-rolled because std::uniform_real_distribution and friends are not.
class Rng {
   public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(eng_() % static_cast<uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, one value per call (the spare is discarded to keep the
    // stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // resample until within clip standard deviations
    double trunc_normal(double std, double clip = 2.0) {
        double v = normal();
        while (std::fabs(v) > clip) v = normal();
        return v * std;
    }

   private:
    std::mt19937_64 eng_;
};

}  // namespace pros
