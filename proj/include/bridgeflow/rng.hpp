#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace bridgeflow {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Seedable, splittable stream of randomness. Streams are derived by mixing
// the parent seed with a label or index through splitmix64, so distinct
// labels give statistically independent sequences and the whole tree is
// reproducible from the master seed. Normal draws use Box-Muller on the
// mt19937_64 output; the sequence is fixed by the standard, not by libc.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    static RngStream named(std::uint64_t seed, std::string_view label) {
        std::uint64_t s = seed ^ detail::fnv1a(label);
        detail::splitmix64(s);
        return RngStream(detail::splitmix64(s));
    }

    RngStream split(std::uint64_t index) const {
        std::uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ULL * (index + 1));
        detail::splitmix64(s);
        return RngStream(detail::splitmix64(s));
    }

    // uniform in [0, 1)
    double uniform() {
        return std::ldexp(static_cast<double>(engine_() >> 11), -53);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd normal_vector(int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    Eigen::MatrixXd normal_matrix(int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace bridgeflow
