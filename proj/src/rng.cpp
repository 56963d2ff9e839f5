#include "fpklab/rng.hpp"

#include <cmath>

namespace fpklab {

namespace {

constexpr std::uint32_t kMult0 = 0xD2511F53u;
constexpr std::uint32_t kMult1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<std::uint32_t, 4>& x, const std::array<std::uint32_t, 2>& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMult0) * x[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMult1) * x[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
}

// 64-bit mix (splitmix64 finalizer), used to spread the substream tag.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> PhiloxStream::block(std::array<std::uint32_t, 4> counter,
                                                 std::array<std::uint32_t, 2> key) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        round_once(counter, key);
    }
    return counter;
}

PhiloxStream::PhiloxStream(std::uint64_t seed, std::uint64_t stream, std::int32_t substream) {
    // The substream tag is folded into the high stream word through a
    // bijective mix so (stream, substream) pairs never collide for
    // stream < 2^32, which covers any realistic path count.
    const std::uint64_t tag = mix64(static_cast<std::uint64_t>(static_cast<std::int64_t>(substream)));
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    stream_lo_ = static_cast<std::uint32_t>(stream);
    stream_hi_ = static_cast<std::uint32_t>(stream >> 32) ^ static_cast<std::uint32_t>(tag);
}

void PhiloxStream::refill() {
    const std::array<std::uint32_t, 4> counter = {
        static_cast<std::uint32_t>(draw_counter_),
        static_cast<std::uint32_t>(draw_counter_ >> 32),
        stream_lo_,
        stream_hi_,
    };
    buffer_ = block(counter, key_);
    ++draw_counter_;
    buffer_pos_ = 0;
}

double PhiloxStream::uniform() {
    if (buffer_pos_ > 2) refill();
    const std::uint64_t hi = buffer_[static_cast<std::size_t>(buffer_pos_)];
    const std::uint64_t lo = buffer_[static_cast<std::size_t>(buffer_pos_ + 1)];
    buffer_pos_ += 2;
    const std::uint64_t bits = (hi << 32) | lo;
    // 53-bit mantissa, centered away from 0 and 1.
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double PhiloxStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

}  // namespace fpklab
