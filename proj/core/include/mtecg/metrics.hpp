#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtecg/tensor.hpp"

namespace mtecg {

struct LabelCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;
};

struct EvalResult {
    std::vector<double> per_label_f1;
    std::vector<LabelCounts> counts;
    double macro = 0.0; // unweighted mean of per_label_f1
};

// predictions/truths: n x C with entries exactly 0 or 1. Per-label
// F1 = 2tp/(2tp+fp+fn), defined as 0 when the denominator is 0.
EvalResult macro_f1(const Tensor& predictions, const Tensor& truths);

// sigmoid(logit) > threshold, strict.
Tensor threshold_logits(const Tensor& logits, double threshold);

// Mean over all entries of max(z,0) - z*y + log(1+exp(-|z|)).
double bce_with_logits(const Tensor& logits, const Tensor& labels);

// One line per label (name, tp, fp, fn, tn, f1) plus a macro_f1 summary row.
std::string eval_report_csv(const EvalResult& result, const std::vector<std::string>& label_names);

} // namespace mtecg
