#pragma once

#include <vector>

#include "mtecg/rng.hpp"
#include "mtecg/tensor.hpp"

namespace mtecg {

// T flattened non-overlapping segments of a K x Q signal, one per row.
// Each row is the lead-major flattening of a K x (Q/T) block.
struct SegmentSequence {
    Tensor segments; // T x d_seg
    int t_len = 0;
    int k_leads = 0;

    int d_seg() const { return segments.cols(); }
};

// Partition of {0..T-1} into kept and hidden segment indices, both sorted
// ascending so positional embeddings attach unambiguously.
struct MaskPlan {
    std::vector<int> unmasked;
    std::vector<int> masked;
    int t_len = 0;
};

SegmentSequence segment(const Tensor& signal, int t_len);

// Inverse of segment; reassemble(segment(x, T), Q) == x exactly.
Tensor reassemble(const SegmentSequence& seq, int q_samples);

// S' = round(ratio * T), ties away from zero.
int masked_count(int t_len, double masking_ratio);

// Uniform without replacement; draws exactly masked_count indices.
MaskPlan sample_mask(int t_len, double masking_ratio, Rng& rng);

} // namespace mtecg
