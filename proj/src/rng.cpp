#include "ugforecast/rng.hpp"

#include <cmath>

namespace ugf {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
} // namespace

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return splitmix64(state_);
}

double RngStream::uniform() {
    // 53 high bits -> double in [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 1.0 - uniform(); // (0, 1]: keeps log(u1) finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = kTwoPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

void RngStream::fill_uniform(Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform();
}

void RngStream::fill_gaussian(Tensor& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = gaussian();
}

Tensor RngStream::uniform_tensor(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    fill_uniform(t);
    return t;
}

Tensor RngStream::gaussian_tensor(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    fill_gaussian(t);
    return t;
}

RngStream RngStream::split(std::uint64_t salt) const {
    return RngStream(mix_seed(seed_, salt));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t state = seed ^ (0xA0761D6478BD642FULL * (salt + 1));
    return splitmix64(state);
}

} // namespace ugf
