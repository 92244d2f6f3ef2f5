#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

namespace uqbench {

// splitmix64 finalizer: a bijective 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// RngStream — deterministic, label-addressed random stream.
//
// The same (seed, label) pair yields the same value sequence on every
// platform and under any thread schedule; workers derive their own streams
// and never share one.
// ---------------------------------------------------------------------------
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string label)
        : seed_(seed), label_(std::move(label)) {
        state_ = mix64(seed_ ^ mix64(fnv1a64(label_)));
        if (state_ == 0) state_ = 0x6a09e667f3bcc909ULL;
    }

    std::uint64_t seed() const { return seed_; }
    const std::string& label() const { return label_; }

    // Child stream addressed by a sub-label; independent of draw order.
    RngStream child(std::string_view sublabel) const {
        return RngStream(seed_, label_ + "/" + std::string(sublabel));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        // Modulo bias is negligible for n << 2^64 (worst case here n ~ 1e6).
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; caches the second deviate.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    double half_normal(double scale) { return std::fabs(normal()) * scale; }

    // k distinct values from {0,..,n-1}, partial Fisher-Yates, stable order
    // of selection.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::string label_;
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

enum class SeedMixing { Mixed, Compat };

// Per-realization subsampling seed. Mixed mode hashes (globalSeed, r, n) so
// distinct grid cells never share a seed; compat mode reproduces the literal
// r + n rule, which collides across cells (e.g. r=1,n=30 vs r=2,n=29).
inline std::uint64_t derive_realization_seed(std::uint64_t global_seed, std::uint64_t r,
                                             std::uint64_t n,
                                             SeedMixing mode = SeedMixing::Mixed) {
    if (mode == SeedMixing::Compat) return r + n;
    // (r, n) packed injectively, then mixed; mix64 is bijective so distinct
    // (r, n) map to distinct seeds for a fixed global seed.
    return mix64(global_seed ^ mix64((r << 32) | (n & 0xffffffffULL)));
}

}  // namespace uqbench
