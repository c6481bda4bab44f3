#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace bgps {

// Philox4x32-10 (Salmon et al., SC'11). Stateless bijection from a 128-bit
// counter under a 64-bit key; all randomness in the library is drawn from it.
class Philox4x32 {
  public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) noexcept;
};

// Sequential uniform stream over Philox blocks. Stream (seed, stream_id) fixes
// the key and the upper counter words; the lower words count draws.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    std::uint32_t next_u32() noexcept;
    // 53-bit uniform in [0, 1)
    double next_double() noexcept;

    // number of next_double()/next_u32() results handed out
    std::uint64_t draws() const noexcept { return draws_; }

  private:
    Philox4x32::Key key_;
    std::uint64_t stream_;
    std::uint64_t block_index_ = 0;
    Philox4x32::Counter buffer_{};
    int buffered_ = 0;
    std::uint64_t draws_ = 0;
};

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) noexcept;

// Order-sensitive derivation of independent seeds, e.g. derive_seed(base, step, k).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept;

// 64-bit FNV-1a
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// One standard normal deviate addressed by (seed, a, b); pure function of its arguments.
double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept;

// One uniform [0,1) deviate addressed by (seed, a, b).
double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace bgps
