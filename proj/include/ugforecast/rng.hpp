#ifndef UGF_RNG_HPP
#define UGF_RNG_HPP

#include <cstdint>

#include "ugforecast/tensor.hpp"

namespace ugf {

/// Counter-based deterministic random stream. Identical (seed, draw
/// sequence) produces bit-identical outputs across runs. Uniforms come from
/// SplitMix64; Gaussians from Box-Muller over the uniform stream, so no
/// library distribution implementation can change the values underneath us.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed), counter_(0) {}

    std::uint64_t seed() const { return seed_; }
    /// Number of raw 64-bit draws consumed so far.
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();

    /// Uniform double in [0, 1).
    double uniform();

    /// Standard normal draw (Box-Muller; the second draw of each pair is
    /// cached and returned on the following call).
    double gaussian();

    void fill_uniform(Tensor& t);
    void fill_gaussian(Tensor& t);

    Tensor uniform_tensor(std::vector<std::size_t> shape);
    Tensor gaussian_tensor(std::vector<std::size_t> shape);

    /// Derive an independent stream for a named purpose. Deterministic in
    /// (seed, salt) only; does not consume draws from this stream.
    RngStream split(std::uint64_t salt) const;

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    std::uint64_t counter_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stable 64-bit mix of (seed, salt) used for stream derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace ugf

#endif
