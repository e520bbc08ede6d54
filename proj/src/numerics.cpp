#include "ugforecast/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ugf {

double sigmoid(double x) {
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        double e = std::exp(x);
        s = e / (1.0 + e);
    }
    // keep the open-interval contract even when exp() underflows
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(s, lo, hi);
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid(out[i]);
    return out;
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

Tensor softplus(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = softplus(out[i]);
    return out;
}

Tensor softmax_rows(const Tensor& scores) {
    UGF_REQUIRE(scores.rank() == 2, "softmax_rows expects a rank-2 tensor");
    UGF_REQUIRE(scores.all_finite(), "softmax_rows requires finite inputs");
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, scores.at2(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            double e = std::exp(scores.at2(i, j) - mx);
            out.at2(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < cols; ++j) out.at2(i, j) /= sum;
    }
    return out;
}

double pearson_correlation(const Tensor& a, const Tensor& b) {
    UGF_REQUIRE(a.numel() == b.numel(), "pearson_correlation: length mismatch");
    UGF_REQUIRE(a.numel() >= 2, "pearson_correlation: need at least 2 elements");
    const std::size_t n = a.numel();
    double ma = a.mean_value(), mb = b.mean_value();
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    double sa = std::sqrt(va / static_cast<double>(n));
    double sb = std::sqrt(vb / static_cast<double>(n));
    if (sa < 1e-12 || sb < 1e-12) return 0.0; // degenerate input: defined as 0
    double r = cov / std::sqrt(va * vb);
    return std::clamp(r, -1.0, 1.0);
}

double median(std::vector<double> v) {
    UGF_REQUIRE(!v.empty(), "median of empty set");
    const std::size_t n = v.size();
    std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

double quantile(std::vector<double> v, double q) {
    UGF_REQUIRE(!v.empty(), "quantile of empty set");
    UGF_REQUIRE(q >= 0.0 && q <= 1.0, "quantile level must be in [0,1]");
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

} // namespace ugf
