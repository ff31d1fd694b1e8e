#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mtecg {

// Dense row-major matrix of doubles. Row vectors are 1xN, scalars 1x1.
// Zero-row tensors are legal (empty mask edge cases flow through the model).
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0);

    // 1xN row vector from values.
    static Tensor row(std::vector<double> values);
    // rows x cols from row-major values; size must match.
    static Tensor from(int rows, int cols, std::vector<double> values);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(rows_) * cols_; }
    bool empty() const { return numel() == 0; }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    void fill(double v);
    bool all_finite() const;
    std::string shape_str() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Exact element-wise equality (shape included).
bool operator==(const Tensor& a, const Tensor& b);
inline bool operator!=(const Tensor& a, const Tensor& b) { return !(a == b); }

// Largest |a-b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace mtecg
