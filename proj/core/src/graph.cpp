#include "mtecg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtecg {

namespace {

// C += A * B, row-major, ikj order.
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b.row_ptr(p);
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A * B^T.
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (int j = 0; j < n; ++j) {
            const double* bj = b.row_ptr(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C += A^T * B, where A is (m,k), B is (m,n), C is (k,n).
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const double* ai = a.row_ptr(i);
        const double* bi = b.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c.row_ptr(p);
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

double gelu_fwd(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    return cdf + x * phi;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace

Graph::Node& Graph::node(NodeId id) {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
        throw std::invalid_argument("Graph: node id out of range");
    }
    return nodes_[id];
}

const Graph::Node& Graph::node(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
        throw std::invalid_argument("Graph: node id out of range");
    }
    return nodes_[id];
}

NodeId Graph::push(Node n) {
    eval(n);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf(Tensor value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf_ref(const Tensor* value) {
    if (value == nullptr) throw std::invalid_argument("Graph::leaf_ref: null tensor");
    Node n;
    n.op = Op::leaf;
    n.ext = value;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    if (value(a).cols() != value(b).rows()) {
        throw std::invalid_argument("matmul: inner dimensions disagree " +
                                    value(a).shape_str() + " x " + value(b).shape_str());
    }
    Node n;
    n.op = Op::matmul;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Graph::matmul_nt(NodeId a, NodeId b) {
    if (value(a).cols() != value(b).cols()) {
        throw std::invalid_argument("matmul_nt: inner dimensions disagree " +
                                    value(a).shape_str() + " x " + value(b).shape_str() + "^T");
    }
    Node n;
    n.op = Op::matmul_nt;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b))) {
        throw std::invalid_argument("add: shape mismatch " + value(a).shape_str() +
                                    " vs " + value(b).shape_str());
    }
    Node n;
    n.op = Op::add;
    n.in = {a, b};
    return push(std::move(n));
}

NodeId Graph::add_rowvec(NodeId a, NodeId bias) {
    if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols()) {
        throw std::invalid_argument("add_rowvec: bias shape mismatch");
    }
    Node n;
    n.op = Op::add_rowvec;
    n.in = {a, bias};
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
    Node n;
    n.op = Op::scale;
    n.in = {a};
    n.dparam = c;
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const int c = value(x).cols();
    if (value(gamma).rows() != 1 || value(gamma).cols() != c ||
        value(beta).rows() != 1 || value(beta).cols() != c) {
        throw std::invalid_argument("layer_norm: affine parameter shape mismatch");
    }
    Node n;
    n.op = Op::layer_norm;
    n.in = {x, gamma, beta};
    n.dparam = eps;
    return push(std::move(n));
}

NodeId Graph::gelu(NodeId x) {
    Node n;
    n.op = Op::gelu;
    n.in = {x};
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
    Node n;
    n.op = Op::softmax_rows;
    n.in = {x};
    return push(std::move(n));
}

NodeId Graph::slice_rows(NodeId x, int start, int len) {
    if (start < 0 || len < 0 || start + len > value(x).rows()) {
        throw std::invalid_argument("slice_rows: range out of bounds");
    }
    Node n;
    n.op = Op::slice_rows;
    n.in = {x};
    n.iparams = {start, len};
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, int start, int len) {
    if (start < 0 || len < 0 || start + len > value(x).cols()) {
        throw std::invalid_argument("slice_cols: range out of bounds");
    }
    Node n;
    n.op = Op::slice_cols;
    n.in = {x};
    n.iparams = {start, len};
    return push(std::move(n));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int c = value(xs[0]).cols();
    for (NodeId id : xs) {
        if (value(id).cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    }
    Node n;
    n.op = Op::concat_rows;
    n.in = xs;
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int r = value(xs[0]).rows();
    for (NodeId id : xs) {
        if (value(id).rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    }
    Node n;
    n.op = Op::concat_cols;
    n.in = xs;
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId x, std::vector<int> indices) {
    const int r = value(x).rows();
    for (int i : indices) {
        if (i < 0 || i >= r) throw std::invalid_argument("gather_rows: index out of range");
    }
    Node n;
    n.op = Op::gather_rows;
    n.in = {x};
    n.iparams = std::move(indices);
    return push(std::move(n));
}

NodeId Graph::repeat_row(NodeId x, int count) {
    if (value(x).rows() != 1) throw std::invalid_argument("repeat_row: input must be 1xN");
    if (count < 0) throw std::invalid_argument("repeat_row: negative count");
    Node n;
    n.op = Op::repeat_row;
    n.in = {x};
    n.iparams = {count};
    return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId x) {
    if (value(x).rows() == 0) throw std::invalid_argument("mean_rows: empty input");
    Node n;
    n.op = Op::mean_rows;
    n.in = {x};
    return push(std::move(n));
}

NodeId Graph::sub_const(NodeId x, Tensor c) {
    if (!value(x).same_shape(c)) throw std::invalid_argument("sub_const: shape mismatch");
    Node n;
    n.op = Op::sub_const;
    n.in = {x};
    n.aux = std::move(c);
    return push(std::move(n));
}

NodeId Graph::sum_squares(NodeId x) {
    Node n;
    n.op = Op::sum_squares;
    n.in = {x};
    return push(std::move(n));
}

NodeId Graph::bce_with_logits_mean(NodeId logits, Tensor labels) {
    if (!value(logits).same_shape(labels)) {
        throw std::invalid_argument("bce_with_logits_mean: label shape mismatch");
    }
    if (labels.numel() == 0) throw std::invalid_argument("bce_with_logits_mean: empty labels");
    Node n;
    n.op = Op::bce;
    n.in = {logits};
    n.aux = std::move(labels);
    return push(std::move(n));
}

void Graph::eval(Node& n) {
    switch (n.op) {
    case Op::leaf:
        break;
    case Op::matmul: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        n.value = Tensor(a.rows(), b.cols());
        matmul_acc(a, b, n.value);
        break;
    }
    case Op::matmul_nt: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        n.value = Tensor(a.rows(), b.rows());
        matmul_nt_acc(a, b, n.value);
        break;
    }
    case Op::add: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        n.value = a;
        double* p = n.value.data();
        const double* q = b.data();
        for (std::int64_t i = 0; i < b.numel(); ++i) p[i] += q[i];
        break;
    }
    case Op::add_rowvec: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        n.value = a;
        for (int r = 0; r < a.rows(); ++r) {
            double* p = n.value.row_ptr(r);
            const double* q = b.data();
            for (int c = 0; c < a.cols(); ++c) p[c] += q[c];
        }
        break;
    }
    case Op::scale: {
        n.value = value(n.in[0]);
        double* p = n.value.data();
        for (std::int64_t i = 0; i < n.value.numel(); ++i) p[i] *= n.dparam;
        break;
    }
    case Op::layer_norm: {
        const Tensor& x = value(n.in[0]);
        const Tensor& g = value(n.in[1]);
        const Tensor& b = value(n.in[2]);
        const double eps = n.dparam;
        const int c = x.cols();
        n.value = Tensor(x.rows(), c);
        for (int r = 0; r < x.rows(); ++r) {
            const double* xr = x.row_ptr(r);
            double* yr = n.value.row_ptr(r);
            double mu = 0.0;
            for (int j = 0; j < c; ++j) mu += xr[j];
            mu /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < c; ++j) {
                yr[j] = (xr[j] - mu) * inv * g(0, j) + b(0, j);
            }
        }
        break;
    }
    case Op::gelu: {
        const Tensor& x = value(n.in[0]);
        n.value = Tensor(x.rows(), x.cols());
        const double* p = x.data();
        double* q = n.value.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) q[i] = gelu_fwd(p[i]);
        break;
    }
    case Op::softmax_rows: {
        const Tensor& x = value(n.in[0]);
        n.value = Tensor(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r) {
            const double* xr = x.row_ptr(r);
            double* yr = n.value.row_ptr(r);
            double mx = xr[0];
            for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (int j = 0; j < x.cols(); ++j) {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            }
            for (int j = 0; j < x.cols(); ++j) yr[j] /= sum;
        }
        break;
    }
    case Op::slice_rows: {
        const Tensor& x = value(n.in[0]);
        const int start = n.iparams[0], len = n.iparams[1];
        n.value = Tensor(len, x.cols());
        for (int r = 0; r < len; ++r) {
            const double* src = x.row_ptr(start + r);
            double* dst = n.value.row_ptr(r);
            for (int j = 0; j < x.cols(); ++j) dst[j] = src[j];
        }
        break;
    }
    case Op::slice_cols: {
        const Tensor& x = value(n.in[0]);
        const int start = n.iparams[0], len = n.iparams[1];
        n.value = Tensor(x.rows(), len);
        for (int r = 0; r < x.rows(); ++r) {
            const double* src = x.row_ptr(r) + start;
            double* dst = n.value.row_ptr(r);
            for (int j = 0; j < len; ++j) dst[j] = src[j];
        }
        break;
    }
    case Op::concat_rows: {
        int rows = 0;
        const int c = value(n.in[0]).cols();
        for (NodeId id : n.in) rows += value(id).rows();
        n.value = Tensor(rows, c);
        int at = 0;
        for (NodeId id : n.in) {
            const Tensor& x = value(id);
            for (int r = 0; r < x.rows(); ++r, ++at) {
                const double* src = x.row_ptr(r);
                double* dst = n.value.row_ptr(at);
                for (int j = 0; j < c; ++j) dst[j] = src[j];
            }
        }
        break;
    }
    case Op::concat_cols: {
        int cols = 0;
        const int r = value(n.in[0]).rows();
        for (NodeId id : n.in) cols += value(id).cols();
        n.value = Tensor(r, cols);
        int at = 0;
        for (NodeId id : n.in) {
            const Tensor& x = value(id);
            for (int i = 0; i < r; ++i) {
                const double* src = x.row_ptr(i);
                double* dst = n.value.row_ptr(i) + at;
                for (int j = 0; j < x.cols(); ++j) dst[j] = src[j];
            }
            at += x.cols();
        }
        break;
    }
    case Op::gather_rows: {
        const Tensor& x = value(n.in[0]);
        n.value = Tensor(static_cast<int>(n.iparams.size()), x.cols());
        for (std::size_t r = 0; r < n.iparams.size(); ++r) {
            const double* src = x.row_ptr(n.iparams[r]);
            double* dst = n.value.row_ptr(static_cast<int>(r));
            for (int j = 0; j < x.cols(); ++j) dst[j] = src[j];
        }
        break;
    }
    case Op::repeat_row: {
        const Tensor& x = value(n.in[0]);
        const int count = n.iparams[0];
        n.value = Tensor(count, x.cols());
        for (int r = 0; r < count; ++r) {
            double* dst = n.value.row_ptr(r);
            const double* src = x.data();
            for (int j = 0; j < x.cols(); ++j) dst[j] = src[j];
        }
        break;
    }
    case Op::mean_rows: {
        const Tensor& x = value(n.in[0]);
        n.value = Tensor(1, x.cols());
        double* dst = n.value.data();
        for (int r = 0; r < x.rows(); ++r) {
            const double* src = x.row_ptr(r);
            for (int j = 0; j < x.cols(); ++j) dst[j] += src[j];
        }
        for (int j = 0; j < x.cols(); ++j) dst[j] /= x.rows();
        break;
    }
    case Op::sub_const: {
        const Tensor& x = value(n.in[0]);
        n.value = x;
        double* p = n.value.data();
        const double* q = n.aux.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) p[i] -= q[i];
        break;
    }
    case Op::sum_squares: {
        const Tensor& x = value(n.in[0]);
        double s = 0.0;
        const double* p = x.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) s += p[i] * p[i];
        n.value = Tensor(1, 1, s);
        break;
    }
    case Op::bce: {
        const Tensor& z = value(n.in[0]);
        const Tensor& y = n.aux;
        double s = 0.0;
        const double* zp = z.data();
        const double* yp = y.data();
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            s += std::max(zp[i], 0.0) - zp[i] * yp[i] + std::log1p(std::exp(-std::fabs(zp[i])));
        }
        n.value = Tensor(1, 1, s / static_cast<double>(z.numel()));
        break;
    }
    }
}

Tensor& Graph::grad_buf(NodeId id) {
    // backward() shapes every grad buffer before the reverse sweep.
    return node(id).grad;
}

const Tensor& Graph::grad(NodeId id) const {
    const Node& n = node(id);
    if (!consumed_) throw std::logic_error("Graph::grad: backward has not run");
    return n.grad;
}

void Graph::backward(NodeId root, const Tensor& upstream) {
    if (consumed_) throw std::logic_error("Graph::backward: trace already consumed");
    Node& r = node(root);
    if (!upstream.same_shape(val(r))) {
        throw std::invalid_argument("Graph::backward: upstream gradient shape mismatch");
    }
    consumed_ = true;
    for (auto& n : nodes_) {
        n.grad = Tensor(val(n).rows(), val(n).cols());
    }
    r.grad = upstream;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        backprop(*it);
    }
}

void Graph::backprop(Node& n) {
    if (n.op == Op::leaf) return;
    const Tensor& g = n.grad;
    switch (n.op) {
    case Op::leaf:
        break;
    case Op::matmul: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        matmul_nt_acc(g, b, grad_buf(n.in[0]));   // dA += G B^T
        matmul_tn_acc(a, g, grad_buf(n.in[1]));   // dB += A^T G
        break;
    }
    case Op::matmul_nt: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        matmul_acc(g, b, grad_buf(n.in[0]));      // dA += G B
        matmul_tn_acc(g, a, grad_buf(n.in[1]));   // dB += G^T A
        break;
    }
    case Op::add: {
        for (int s = 0; s < 2; ++s) {
            Tensor& d = grad_buf(n.in[s]);
            double* p = d.data();
            const double* q = g.data();
            for (std::int64_t i = 0; i < g.numel(); ++i) p[i] += q[i];
        }
        break;
    }
    case Op::add_rowvec: {
        Tensor& da = grad_buf(n.in[0]);
        double* p = da.data();
        const double* q = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) p[i] += q[i];
        Tensor& db = grad_buf(n.in[1]);
        for (int r = 0; r < g.rows(); ++r) {
            const double* gr = g.row_ptr(r);
            for (int j = 0; j < g.cols(); ++j) db(0, j) += gr[j];
        }
        break;
    }
    case Op::scale: {
        Tensor& d = grad_buf(n.in[0]);
        double* p = d.data();
        const double* q = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) p[i] += n.dparam * q[i];
        break;
    }
    case Op::layer_norm: {
        const Tensor& x = value(n.in[0]);
        const Tensor& gam = value(n.in[1]);
        const double eps = n.dparam;
        const int c = x.cols();
        Tensor& dx = grad_buf(n.in[0]);
        Tensor& dgam = grad_buf(n.in[1]);
        Tensor& dbet = grad_buf(n.in[2]);
        for (int r = 0; r < x.rows(); ++r) {
            const double* xr = x.row_ptr(r);
            const double* gr = g.row_ptr(r);
            double mu = 0.0;
            for (int j = 0; j < c; ++j) mu += xr[j];
            mu /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_h = 0.0, mean_hx = 0.0;
            for (int j = 0; j < c; ++j) {
                const double xh = (xr[j] - mu) * inv;
                const double h = gr[j] * gam(0, j);
                mean_h += h;
                mean_hx += h * xh;
                dgam(0, j) += gr[j] * xh;
                dbet(0, j) += gr[j];
            }
            mean_h /= c;
            mean_hx /= c;
            double* dxr = dx.row_ptr(r);
            for (int j = 0; j < c; ++j) {
                const double xh = (xr[j] - mu) * inv;
                const double h = gr[j] * gam(0, j);
                dxr[j] += (h - mean_h - xh * mean_hx) * inv;
            }
        }
        break;
    }
    case Op::gelu: {
        const Tensor& x = value(n.in[0]);
        Tensor& d = grad_buf(n.in[0]);
        const double* xp = x.data();
        const double* gp = g.data();
        double* dp = d.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) dp[i] += gp[i] * gelu_grad(xp[i]);
        break;
    }
    case Op::softmax_rows: {
        const Tensor& y = n.value;
        Tensor& d = grad_buf(n.in[0]);
        for (int r = 0; r < y.rows(); ++r) {
            const double* yr = y.row_ptr(r);
            const double* gr = g.row_ptr(r);
            double dot = 0.0;
            for (int j = 0; j < y.cols(); ++j) dot += gr[j] * yr[j];
            double* dr = d.row_ptr(r);
            for (int j = 0; j < y.cols(); ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
        break;
    }
    case Op::slice_rows: {
        Tensor& d = grad_buf(n.in[0]);
        const int start = n.iparams[0], len = n.iparams[1];
        for (int r = 0; r < len; ++r) {
            double* dst = d.row_ptr(start + r);
            const double* src = g.row_ptr(r);
            for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
        }
        break;
    }
    case Op::slice_cols: {
        Tensor& d = grad_buf(n.in[0]);
        const int start = n.iparams[0], len = n.iparams[1];
        for (int r = 0; r < g.rows(); ++r) {
            double* dst = d.row_ptr(r) + start;
            const double* src = g.row_ptr(r);
            for (int j = 0; j < len; ++j) dst[j] += src[j];
        }
        break;
    }
    case Op::concat_rows: {
        int at = 0;
        for (NodeId id : n.in) {
            Tensor& d = grad_buf(id);
            for (int r = 0; r < d.rows(); ++r, ++at) {
                double* dst = d.row_ptr(r);
                const double* src = g.row_ptr(at);
                for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
            }
        }
        break;
    }
    case Op::concat_cols: {
        int at = 0;
        for (NodeId id : n.in) {
            Tensor& d = grad_buf(id);
            for (int r = 0; r < g.rows(); ++r) {
                double* dst = d.row_ptr(r);
                const double* src = g.row_ptr(r) + at;
                for (int j = 0; j < d.cols(); ++j) dst[j] += src[j];
            }
            at += d.cols();
        }
        break;
    }
    case Op::gather_rows: {
        Tensor& d = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < n.iparams.size(); ++r) {
            double* dst = d.row_ptr(n.iparams[r]);
            const double* src = g.row_ptr(static_cast<int>(r));
            for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
        }
        break;
    }
    case Op::repeat_row: {
        Tensor& d = grad_buf(n.in[0]);
        for (int r = 0; r < g.rows(); ++r) {
            const double* src = g.row_ptr(r);
            for (int j = 0; j < g.cols(); ++j) d(0, j) += src[j];
        }
        break;
    }
    case Op::mean_rows: {
        Tensor& d = grad_buf(n.in[0]);
        const double invm = 1.0 / d.rows();
        for (int r = 0; r < d.rows(); ++r) {
            double* dst = d.row_ptr(r);
            const double* src = g.data();
            for (int j = 0; j < g.cols(); ++j) dst[j] += src[j] * invm;
        }
        break;
    }
    case Op::sub_const: {
        Tensor& d = grad_buf(n.in[0]);
        double* p = d.data();
        const double* q = g.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) p[i] += q[i];
        break;
    }
    case Op::sum_squares: {
        const Tensor& x = value(n.in[0]);
        Tensor& d = grad_buf(n.in[0]);
        const double gs = g(0, 0);
        const double* xp = x.data();
        double* dp = d.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) dp[i] += 2.0 * xp[i] * gs;
        break;
    }
    case Op::bce: {
        const Tensor& z = value(n.in[0]);
        const Tensor& y = n.aux;
        Tensor& d = grad_buf(n.in[0]);
        const double gs = g(0, 0) / static_cast<double>(z.numel());
        const double* zp = z.data();
        const double* yp = y.data();
        double* dp = d.data();
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            dp[i] += gs * (sigmoid(zp[i]) - yp[i]);
        }
        break;
    }
    }
}

void Graph::replay() {
    for (auto& n : nodes_) {
        if (n.op != Op::leaf) eval(n);
    }
}

} // namespace mtecg
