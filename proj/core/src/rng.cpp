#include "bgps/rng.hpp"

#include <cmath>
#include <numbers>

namespace bgps {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t & hi, std::uint32_t & lo) noexcept {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
    return static_cast<double>(bits & ((1ULL << 53) - 1)) * 0x1.0p-53;
}

Philox4x32::Counter address(std::uint64_t a, std::uint64_t b) noexcept {
    return {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
            static_cast<std::uint32_t>(b >> 32)};
}

Philox4x32::Key key_of(std::uint64_t seed) noexcept {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : key_(key_of(seed)), stream_(stream_id) {}

std::uint32_t CounterRng::next_u32() noexcept {
    if (buffered_ == 0) {
        buffer_ = Philox4x32::block(address(block_index_++, stream_), key_);
        buffered_ = 4;
    }
    ++draws_;
    return buffer_[4 - buffered_--];
}

double CounterRng::next_double() noexcept {
    const std::uint32_t hi = next_u32();
    const std::uint32_t lo = next_u32();
    --draws_;  // one double counts as one draw
    return to_unit(hi, lo);
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) noexcept {
    return mix64(mix64(base) ^ (a * 0xD6E8FEB86659FD93ULL + 0x2545F4914F6CDD1DULL));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
    return derive_seed(derive_seed(base, a), b);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
    const auto out = Philox4x32::block(address(a, b), key_of(seed));
    return to_unit(out[0], out[1]);
}

double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
    // Box-Muller on the two 53-bit halves of a single block
    const auto out = Philox4x32::block(address(a, b), key_of(seed));
    const double u1 = 1.0 - to_unit(out[0], out[1]);  // (0, 1]
    const double u2 = to_unit(out[2], out[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace bgps
