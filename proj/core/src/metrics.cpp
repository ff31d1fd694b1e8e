#include "mtecg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mtecg {

EvalResult macro_f1(const Tensor& predictions, const Tensor& truths) {
    if (!predictions.same_shape(truths)) {
        throw std::invalid_argument("macro_f1: shape mismatch " + predictions.shape_str() +
                                    " vs " + truths.shape_str());
    }
    const int n = predictions.rows(), c = predictions.cols();
    if (c < 1) throw std::invalid_argument("macro_f1: no labels");

    EvalResult res;
    res.counts.resize(c);
    res.per_label_f1.resize(c);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            const double p = predictions(i, j), t = truths(i, j);
            if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0)) {
                throw std::invalid_argument("macro_f1: entries must be 0 or 1");
            }
            auto& lc = res.counts[j];
            if (p == 1.0 && t == 1.0) ++lc.tp;
            else if (p == 1.0) ++lc.fp;
            else if (t == 1.0) ++lc.fn;
            else ++lc.tn;
        }
    }
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
        const auto& lc = res.counts[j];
        const std::int64_t denom = 2 * lc.tp + lc.fp + lc.fn;
        res.per_label_f1[j] = denom == 0 ? 0.0 : 2.0 * lc.tp / static_cast<double>(denom);
        sum += res.per_label_f1[j];
    }
    res.macro = sum / c;
    return res;
}

Tensor threshold_logits(const Tensor& logits, double threshold) {
    if (!logits.all_finite()) throw std::invalid_argument("threshold_logits: non-finite logits");
    Tensor out(logits.rows(), logits.cols());
    const double* p = logits.data();
    double* q = out.data();
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-p[i]));
        q[i] = s > threshold ? 1.0 : 0.0;
    }
    return out;
}

double bce_with_logits(const Tensor& logits, const Tensor& labels) {
    if (!logits.same_shape(labels)) {
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    }
    if (logits.numel() == 0) throw std::invalid_argument("bce_with_logits: empty input");
    const double* zp = logits.data();
    const double* yp = labels.data();
    double s = 0.0;
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        s += std::max(zp[i], 0.0) - zp[i] * yp[i] + std::log1p(std::exp(-std::fabs(zp[i])));
    }
    return s / static_cast<double>(logits.numel());
}

std::string eval_report_csv(const EvalResult& result, const std::vector<std::string>& label_names) {
    if (label_names.size() != result.per_label_f1.size()) {
        throw std::invalid_argument("eval_report_csv: label name count mismatch");
    }
    std::ostringstream os;
    os << "label,tp,fp,fn,tn,f1\n";
    os.precision(17);
    for (std::size_t j = 0; j < label_names.size(); ++j) {
        const auto& lc = result.counts[j];
        os << label_names[j] << ',' << lc.tp << ',' << lc.fp << ',' << lc.fn << ',' << lc.tn
           << ',' << result.per_label_f1[j] << '\n';
    }
    os << "macro_f1,,,,," << result.macro << '\n';
    return os.str();
}

} // namespace mtecg
