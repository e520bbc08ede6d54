#ifndef UGF_NUMERICS_HPP
#define UGF_NUMERICS_HPP

#include <vector>

#include "ugforecast/tensor.hpp"

namespace ugf {

/// Numerically stable logistic. Output is clamped to the open interval
/// (0, 1): saturated inputs return the closest representable value instead
/// of exactly 0 or 1.
double sigmoid(double x);
Tensor sigmoid(const Tensor& x);

/// log(1 + exp(x)), overflow-safe.
double softplus(double x);
Tensor softplus(const Tensor& x);

/// Row-wise softmax of a rank-2 tensor. The row maximum is subtracted
/// before exponentiation, so the result is shift-invariant per row and
/// safe for extreme score magnitudes.
Tensor softmax_rows(const Tensor& scores);

/// Pearson correlation of two flat tensors of equal length >= 2.
/// Returns 0.0 when either input has (population) standard deviation
/// below 1e-12; otherwise the result is clamped to [-1, 1].
double pearson_correlation(const Tensor& a, const Tensor& b);

/// Median with the even-count convention: midpoint of the two central
/// order statistics. The input is copied.
double median(std::vector<double> v);

/// Quantile with linear interpolation between order statistics, q in [0,1].
double quantile(std::vector<double> v, double q);

} // namespace ugf

#endif
