#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace flowgen {

// mt19937_64 with hand-written output maps. std::uniform_real_distribution
// and friends are implementation-defined; these are pinned so that a seed
// reproduces the exact same stream everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds, unbiased via rejection
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return lo + static_cast<int64_t>(r % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; caches the second draw
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    std::vector<double> normal_vec(int64_t n) {
        std::vector<double> out(static_cast<size_t>(n));
        for (auto& v : out) v = normal();
        return out;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Engine state as text, for checkpoints.
    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << " " << (have_spare_ ? 1 : 0) << " " << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int spare_flag = 0;
        is >> engine_ >> spare_flag >> spare_;
        have_spare_ = spare_flag != 0;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace flowgen
