#include "mtecg/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mtecg {

SegmentSequence segment(const Tensor& signal, int t_len) {
    const int k = signal.rows(), q = signal.cols();
    if (k < 1 || q < 1) throw std::invalid_argument("segment: empty signal");
    if (t_len < 1 || q % t_len != 0) {
        throw std::invalid_argument("segment: Q=" + std::to_string(q) +
                                    " is not divisible by T=" + std::to_string(t_len));
    }
    const int w = q / t_len;
    SegmentSequence seq;
    seq.t_len = t_len;
    seq.k_leads = k;
    seq.segments = Tensor(t_len, k * w);
    for (int t = 0; t < t_len; ++t) {
        double* row = seq.segments.row_ptr(t);
        for (int lead = 0; lead < k; ++lead) {
            const double* src = signal.row_ptr(lead) + static_cast<std::size_t>(t) * w;
            for (int j = 0; j < w; ++j) row[lead * w + j] = src[j];
        }
    }
    return seq;
}

Tensor reassemble(const SegmentSequence& seq, int q_samples) {
    const int t_len = seq.t_len, k = seq.k_leads, d = seq.d_seg();
    if (seq.segments.rows() != t_len) {
        throw std::invalid_argument("reassemble: segment count disagrees with t_len");
    }
    if (k < 1 || d % k != 0 || t_len * (d / k) != q_samples) {
        throw std::invalid_argument("reassemble: T*d_seg does not match K*Q");
    }
    const int w = d / k;
    Tensor signal(k, q_samples);
    for (int t = 0; t < t_len; ++t) {
        const double* row = seq.segments.row_ptr(t);
        for (int lead = 0; lead < k; ++lead) {
            double* dst = signal.row_ptr(lead) + static_cast<std::size_t>(t) * w;
            for (int j = 0; j < w; ++j) dst[j] = row[lead * w + j];
        }
    }
    return signal;
}

int masked_count(int t_len, double masking_ratio) {
    if (t_len < 1) throw std::invalid_argument("masked_count: T must be positive");
    if (!(masking_ratio >= 0.0 && masking_ratio <= 1.0)) {
        throw std::invalid_argument("masked_count: ratio must lie in [0,1]");
    }
    return static_cast<int>(std::llround(masking_ratio * t_len));
}

MaskPlan sample_mask(int t_len, double masking_ratio, Rng& rng) {
    const int s_prime = masked_count(t_len, masking_ratio);
    std::vector<int> idx(t_len);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first s_prime entries are a uniform
    // without-replacement draw.
    for (int i = 0; i < s_prime; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(t_len - i)));
        std::swap(idx[i], idx[j]);
    }
    MaskPlan plan;
    plan.t_len = t_len;
    plan.masked.assign(idx.begin(), idx.begin() + s_prime);
    plan.unmasked.assign(idx.begin() + s_prime, idx.end());
    std::sort(plan.masked.begin(), plan.masked.end());
    std::sort(plan.unmasked.begin(), plan.unmasked.end());
    return plan;
}

} // namespace mtecg
