#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "htcnn/tensor.hpp"

namespace htcnn {

// Deterministic random source. All randomness in the library flows through
// this class so that a seed fully determines every draw, the state can be
// checkpointed, and the distribution algorithms never change underneath us
// (std:: distributions are implementation-defined; these are not).
class Rng {
public:
    static constexpr const char* kAlgorithmTag = "mt19937_64/boxmuller/v1";

    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw config_error("Rng::bounded requires n > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; generates pairs, caches the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates with the unbiased bounded draw.
    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = bounded(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    // State round-trips as text; mt19937_64's stream form is exact.
    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << spare_;
        return os.str();
    }

    static Rng deserialize(const std::string& state) {
        Rng rng;
        std::istringstream is(state);
        int spare_flag = 0;
        is >> rng.engine_ >> spare_flag >> rng.spare_;
        if (!is) throw config_error("malformed RNG state string");
        rng.has_spare_ = spare_flag != 0;
        return rng;
    }

    bool operator==(const Rng& other) const {
        return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
               (!has_spare_ || spare_ == other.spare_);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64; used to derive independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the tag
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return mix_seed(mix_seed(seed, h), index);
}

}  // namespace htcnn
