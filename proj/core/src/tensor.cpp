#include "mtecg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace mtecg {

namespace {

std::size_t checked_extent(int rows, int cols) {
    if (rows < 0 || cols < 0) {
        throw std::invalid_argument("Tensor: negative dimension");
    }
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
}

} // namespace

Tensor::Tensor(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(checked_extent(rows, cols), fill) {}

Tensor Tensor::row(std::vector<double> values) {
    Tensor t;
    t.rows_ = 1;
    t.cols_ = static_cast<int>(values.size());
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::from(int rows, int cols, std::vector<double> values) {
    if (static_cast<std::int64_t>(values.size()) != static_cast<std::int64_t>(rows) * cols) {
        throw std::invalid_argument("Tensor::from: value count does not match shape");
    }
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = std::move(values);
    return t;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(rows_) + " x " + std::to_string(cols_) + "]";
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (pa[i] != pb[i]) return false;
    }
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(pa[i] - pb[i]));
    }
    return m;
}

} // namespace mtecg
