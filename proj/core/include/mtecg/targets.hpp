#pragma once

#include <string>

#include "mtecg/tensor.hpp"

namespace mtecg {

enum class TargetKind {
    identity,
    per_segment_norm, // (x - mean) / sqrt(var + eps), biased variance
    signed_sqrt,      // sign(x) * |x|^0.5
};

struct TargetConfig {
    TargetKind kind = TargetKind::per_segment_norm;
    double epsilon = 1e-6; // per_segment_norm stabilizer, must be > 0
};

// Accepts "identity" | "psn" | "ssqrt".
TargetKind parse_target_kind(const std::string& name);
const char* target_kind_name(TargetKind kind);

// Reconstruction-target transform applied independently to every row.
// A constant row maps to exact zeros under per_segment_norm.
Tensor apply_target(const Tensor& x, const TargetConfig& config);

} // namespace mtecg
