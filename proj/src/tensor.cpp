#include "ugforecast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ugf {

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::min_value() const {
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max_value() const {
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum_value() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

double Tensor::mean_value() const {
    return sum_value() / static_cast<double>(data_.size());
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << ")";
    return os.str();
}

} // namespace ugf
