#include "mtecg/targets.hpp"

#include <cmath>
#include <stdexcept>

namespace mtecg {

TargetKind parse_target_kind(const std::string& name) {
    if (name == "identity") return TargetKind::identity;
    if (name == "psn") return TargetKind::per_segment_norm;
    if (name == "ssqrt") return TargetKind::signed_sqrt;
    throw std::invalid_argument("unknown target kind '" + name +
                                "' (expected identity, psn, or ssqrt)");
}

const char* target_kind_name(TargetKind kind) {
    switch (kind) {
    case TargetKind::identity: return "identity";
    case TargetKind::per_segment_norm: return "psn";
    case TargetKind::signed_sqrt: return "ssqrt";
    }
    throw std::logic_error("target_kind_name: bad enum value");
}

Tensor apply_target(const Tensor& x, const TargetConfig& config) {
    if (!x.all_finite()) throw std::invalid_argument("apply_target: non-finite input");
    if (config.kind == TargetKind::identity) return x;

    Tensor out(x.rows(), x.cols());
    const int d = x.cols();
    if (config.kind == TargetKind::signed_sqrt) {
        const double* p = x.data();
        double* q = out.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            q[i] = std::copysign(std::sqrt(std::fabs(p[i])), p[i]);
        }
        return out;
    }

    if (!(config.epsilon > 0.0)) {
        throw std::invalid_argument("apply_target: epsilon must be positive");
    }
    if (d == 0) return out;
    for (int r = 0; r < x.rows(); ++r) {
        const double* xr = x.row_ptr(r);
        double* yr = out.row_ptr(r);
        // A constant row must map to exact zeros; computing mean then
        // subtracting would leave rounding residue.
        bool constant = true;
        for (int j = 1; j < d; ++j) {
            if (xr[j] != xr[0]) { constant = false; break; }
        }
        if (constant) continue;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + config.epsilon);
        for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * inv;
    }
    return out;
}

} // namespace mtecg
