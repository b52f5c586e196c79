#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include <rexit/rng.hpp>

using namespace rexit;

TEST_CASE("Philox4x32-10 known-answer vectors") {
    using C = Philox4x32::counter;
    using K = Philox4x32::key;
    CHECK(Philox4x32::generate(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(Philox4x32::generate(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
          C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(Philox4x32::generate(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("trajectory word stream is the scalar Philox on (block, trajectory, cell)") {
    std::uint64_t seed = 0x0123456789abcdefULL, traj = 0x1122334455ULL;
    std::uint32_t cell = 7;
    TrajectoryBits bits(seed, cell, traj);
    for (std::uint32_t block = 0; block < 40; ++block) {
        auto ref = Philox4x32::generate({block, static_cast<std::uint32_t>(traj), static_cast<std::uint32_t>(traj >> 32), cell},
                                        {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
        for (auto w : ref) CHECK(bits() == w);
    }
}

TEST_CASE("normal streams are deterministic and distinct") {
    NormalStream a(1, 0, 5), b(1, 0, 5), c(1, 0, 6), d(1, 1, 5), e(2, 0, 5);
    for (int i = 0; i < 100; ++i) {
        double x = a.next();
        CHECK(x == b.next());
        double yc = c.next(), yd = d.next(), ye = e.next();
        if (i == 0) {
            CHECK(x != yc);
            CHECK(x != yd);
            CHECK(x != ye);
        }
    }
}

TEST_CASE("normal draws: moments and Kolmogorov-Smirnov") {
    const int n = 200000;
    std::vector<double> xs;
    xs.reserve(n);
    for (int t = 0; t < 200; ++t) {
        NormalStream s(99, 3, static_cast<std::uint64_t>(t));
        for (int i = 0; i < n / 200; ++i) xs.push_back(s.next());
    }
    double m = 0, v = 0, k4 = 0;
    for (double x : xs) m += x;
    m /= n;
    for (double x : xs) v += (x - m) * (x - m), k4 += std::pow(x - m, 4);
    v /= n;
    k4 /= n;
    CHECK(std::abs(m) < 5.0 / std::sqrt(n));
    CHECK(std::abs(v - 1.0) < 5.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(k4 - 3.0) < 5.0 * std::sqrt(96.0 / n));
    std::sort(xs.begin(), xs.end());
    double D = 0;
    for (int i = 0; i < n; ++i) {
        double F = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
        D = std::max({D, F - double(i) / n, double(i + 1) / n - F});
    }
    CHECK(D < 1.95 / std::sqrt(double(n))); // 0.1% level
}
