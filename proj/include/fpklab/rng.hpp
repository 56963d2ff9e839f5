#pragma once

#include <array>
#include <cstdint>

namespace fpklab {

/// Philox4x32-10 counter-based generator.
///
/// Each (seed, stream, substream) triple addresses an independent random
/// stream; blocks within a stream are indexed by a 64-bit draw counter.
/// Streams can therefore be generated in any order, on any number of
/// threads, with bit-identical output. `stream` is the Monte Carlo path
/// index; `substream` separates usage domains within a path (initial draw
/// vs. Brownian increments).
class PhiloxStream {
public:
    PhiloxStream(std::uint64_t seed, std::uint64_t stream, std::int32_t substream);

    /// Uniform draw in the open interval (0, 1).
    double uniform();

    /// Standard normal draw (Box-Muller; pairs are cached).
    double normal();

    /// Raw 4x32 block for the given counter; exposed for known-answer tests.
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> counter,
                                              std::array<std::uint32_t, 2> key);

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_lo_ = 0;
    std::uint32_t stream_hi_ = 0;
    std::uint64_t draw_counter_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffer_pos_ = 4;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace fpklab
