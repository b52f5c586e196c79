#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>

#include <boost/random/normal_distribution.hpp>

namespace rexit {

// Philox4x32-10 counter-based generator (Salmon et al. constants).
struct Philox4x32 {
    using counter = std::array<std::uint32_t, 4>;
    using key = std::array<std::uint32_t, 2>;

    static counter generate(counter c, key k) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                k[0] += 0x9E3779B9u;
                k[1] += 0xBB67AE85u;
            }
            std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
            std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
            c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
        }
        return c;
    }
};

// The 32-bit word stream of one trajectory: Philox blocks keyed by seed with
// counter (block, trajectory lo, trajectory hi, cell). Satisfies
// UniformRandomBitGenerator.
class TrajectoryBits {
  public:
    using result_type = std::uint32_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    TrajectoryBits(std::uint64_t seed, std::uint32_t cell, std::uint64_t trajectory)
        : k0_(static_cast<std::uint32_t>(seed)), k1_(static_cast<std::uint32_t>(seed >> 32)),
          t0_(static_cast<std::uint32_t>(trajectory)), t1_(static_cast<std::uint32_t>(trajectory >> 32)),
          cell_(cell) {}

    result_type operator()() {
        if (pos_ == words) refill();
        return buf_[pos_++];
    }

  private:
    static constexpr std::size_t lanes = 16;
    static constexpr std::size_t words = 4 * lanes;

    // Same rounds as Philox4x32::generate, laid out one array per counter word
    // so that the compiler can vectorise across lanes.
    static void rounds(std::uint32_t* c0, std::uint32_t* c1, std::uint32_t* c2, std::uint32_t* c3, std::uint32_t k0,
                       std::uint32_t k1) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                k0 += 0x9E3779B9u;
                k1 += 0xBB67AE85u;
            }
            for (std::size_t l = 0; l < lanes; ++l) {
                std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c0[l];
                std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c2[l];
                std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1[l] ^ k0;
                std::uint32_t n1 = static_cast<std::uint32_t>(p1);
                std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3[l] ^ k1;
                std::uint32_t n3 = static_cast<std::uint32_t>(p0);
                c0[l] = n0;
                c1[l] = n1;
                c2[l] = n2;
                c3[l] = n3;
            }
        }
    }

    void refill() {
        alignas(64) std::uint32_t c0[lanes], c1[lanes], c2[lanes], c3[lanes];
        for (std::size_t l = 0; l < lanes; ++l) {
            c0[l] = block_++;
            c1[l] = t0_;
            c2[l] = t1_;
            c3[l] = cell_;
        }
        rounds(c0, c1, c2, c3, k0_, k1_);
        for (std::size_t l = 0; l < lanes; ++l) {
            buf_[4 * l] = c0[l];
            buf_[4 * l + 1] = c1[l];
            buf_[4 * l + 2] = c2[l];
            buf_[4 * l + 3] = c3[l];
        }
        pos_ = 0;
    }

    std::uint32_t k0_, k1_, t0_, t1_, cell_;
    std::uint32_t block_ = 0;
    std::array<result_type, words> buf_{};
    std::size_t pos_ = words;
};

// Standard normals for one trajectory (ziggurat over the trajectory's word
// stream). Draw k is a pure function of (seed, cell, trajectory, k).
class NormalStream {
  public:
    NormalStream(std::uint64_t seed, std::uint32_t cell, std::uint64_t trajectory) : bits_(seed, cell, trajectory) {}

    double next() { return dist_(bits_); }

  private:
    TrajectoryBits bits_;
    boost::random::normal_distribution<double> dist_;
};

} // namespace rexit
