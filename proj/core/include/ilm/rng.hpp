#pragma once

#include <array>
#include <cstdint>

namespace ilm {

// Counter-based generator (Philox4x32-10). A stream is identified by the
// 64-bit master seed (the key) and a 64-bit stream id baked into the counter,
// so any substream can be opened at O(1) cost without touching the others.
// One 128-bit block yields two 64-bit outputs.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          id_lo_(static_cast<std::uint32_t>(stream_id)),
          id_hi_(static_cast<std::uint32_t>(stream_id >> 32)) {}

    std::uint64_t seed() const {
        return static_cast<std::uint64_t>(key_[0]) | (static_cast<std::uint64_t>(key_[1]) << 32);
    }
    std::uint64_t stream_id() const {
        return static_cast<std::uint64_t>(id_lo_) | (static_cast<std::uint64_t>(id_hi_) << 32);
    }

    std::uint64_t next_u64() {
        if (buf_pos_ == 2) {
            refill();
        }
        return buf_[buf_pos_++];
    }

    // Uniform on the open interval (0,1); never returns an endpoint.
    double uniform01() {
        const std::uint64_t x = next_u64();
        return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Rejection keeps the draw exact.
    std::uint64_t uniform_int(std::uint64_t n);

    bool bernoulli(double p) { return uniform01() < p; }

    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    double gamma(double shape, double scale);
    double exponential(double rate);
    double lognormal(double mu, double sigma);
    double beta(double a, double b);
    // Trials-to-first-success count, support {1, 2, ...}.
    std::uint64_t geometric(double p);

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::uint32_t id_lo_;
    std::uint32_t id_hi_;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buf_{};
    int buf_pos_ = 2;
    double spare_normal_ = 0.0;
    bool have_spare_ = false;
};

// SplitMix64 finaliser, used to derive child stream ids from a parent id and
// an index so that distinct (parent, index) pairs land on distinct streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t index) {
    return mix64(parent ^ mix64(index + 0x9E3779B97F4A7C15ull));
}

} // namespace ilm
