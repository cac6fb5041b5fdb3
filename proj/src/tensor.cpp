#include "pros/tensor.hpp"

#include <malloc.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace pros {

namespace {

// Large tensors otherwise hit glibc's mmap threshold and every step churns
// through mmap/munmap page faults.
const bool g_malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
}();

}  // namespace

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

int init_threads_from_env() {
    const char* env = std::getenv("PROS_THREADS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

int& thread_count_ref() {
    static int n = init_threads_from_env();
    return n;
}

std::string& fault_ref() {
    static std::string fault;
    return fault;
}

}  // namespace

int thread_count() { return thread_count_ref(); }
void set_thread_count(int n) { thread_count_ref() = n >= 1 ? n : 1; }

namespace detail {

void Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
}

void set_backward_fault(const std::string& op_name) { fault_ref() = op_name; }
const std::string& backward_fault() { return fault_ref(); }

struct OpAccess {
    static const NodePtr& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
    static void record(Tape* tape, std::function<void()> fn) {
        tape->ops_.push_back({std::move(fn)});
    }
};

}  // namespace detail

namespace {

using detail::Node;
using detail::NodePtr;
using detail::OpAccess;

const NodePtr& node_of(const Tensor& t) {
    if (!t.defined()) throw ShapeError("operation on undefined tensor");
    return OpAccess::node(t);
}

NodePtr new_node(Tape* tape, Shape shape, std::vector<double> value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    if (numel(shape) != static_cast<int64_t>(value.size()))
        throw ShapeError("value size does not match shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->tape = tape;
    return n;
}

Tape* common_tape(const NodePtr& a, const NodePtr& b) {
    if (a->tape != b->tape) throw ShapeError("operands recorded on different tapes");
    return a->tape;
}

// Deliberate gradient corruption for the named op; a test fixture used by the
// gradcheck fault-injection path. No-op unless armed.
void apply_fault(const char* op_name, NodePtr& input) {
    if (fault_ref().empty() || fault_ref() != op_name) return;
    if (!input->requires_grad || input->grad.empty()) return;
    for (double& g : input->grad) g = g * 1.001 + 1e-3;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// b broadcastable over a's leading axes: b.shape is a trailing suffix of
// a.shape
bool trailing_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

struct Dims2 {
    int64_t rows, cols;
};

Dims2 as_2d(const NodePtr& n, const char* what) {
    if (n->shape.size() != 2) throw ShapeError(std::string(what) + ": expected 2-D tensor, got " +
                                               shape_str(n->shape));
    return {n->shape[0], n->shape[1]};
}

// rows/cols view with everything but the last axis flattened into rows
Dims2 row_view(const NodePtr& n) {
    if (n->shape.empty()) throw ShapeError("expected tensor with at least one axis");
    int64_t cols = n->shape.back();
    return {n->size() / cols, cols};
}

}  // namespace

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) throw NumericError("gradient absent");
    return node_->grad;
}

Tensor Tape::constant(Shape shape, std::vector<double> value) {
    return OpAccess::wrap(new_node(this, std::move(shape), std::move(value), false));
}

Tensor Tape::variable(Shape shape, std::vector<double> value) {
    return OpAccess::wrap(new_node(this, std::move(shape), std::move(value), true));
}

Tensor Tape::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    return OpAccess::wrap(new_node(this, std::move(shape), std::move(value), requires_grad));
}

void Tape::backward(const Tensor& output) {
    const NodePtr& out = OpAccess::node(output);
    if (out->tape != this) throw ShapeError("backward: output recorded on a different tape");
    if (out->size() != 1) throw ShapeError("backward: output must be scalar");
    if (backward_done_) throw std::logic_error("backward: tape already replayed once");
    backward_done_ = true;
    if (!out->requires_grad) return;
    out->grad.assign(1, 1.0);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        it->backward();
    }
}

// ---- op implementations ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    if (!trailing_suffix(an->shape, bn->shape))
        throw ShapeError("add: shapes " + shape_str(an->shape) + " and " + shape_str(bn->shape));
    const int64_t n = an->size();
    const int64_t bs = bn->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = an->value[i] + bn->value[i % bs];
    auto on = new_node(tape, an->shape, std::move(out), an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on] {
            if (on->grad.empty()) return;
            const int64_t n = on->size();
            const int64_t bs = bn->size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i % bs] += on->grad[i];
            }
            NodePtr first = an;
            apply_fault("add", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    if (!trailing_suffix(an->shape, bn->shape))
        throw ShapeError("sub: shapes " + shape_str(an->shape) + " and " + shape_str(bn->shape));
    const int64_t n = an->size();
    const int64_t bs = bn->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = an->value[i] - bn->value[i % bs];
    auto on = new_node(tape, an->shape, std::move(out), an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on] {
            if (on->grad.empty()) return;
            const int64_t n = on->size();
            const int64_t bs = bn->size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i % bs] -= on->grad[i];
            }
            NodePtr first = an;
            apply_fault("sub", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    if (!same_shape(an->shape, bn->shape))
        throw ShapeError("mul: shapes " + shape_str(an->shape) + " and " + shape_str(bn->shape));
    const int64_t n = an->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = an->value[i] * bn->value[i];
    auto on = new_node(tape, an->shape, std::move(out), an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on] {
            if (on->grad.empty()) return;
            const int64_t n = on->size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
            }
            NodePtr first = an;
            apply_fault("mul", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor scale(const Tensor& a, double s) {
    const NodePtr& an = node_of(a);
    const int64_t n = an->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = an->value[i] * s;
    auto on = new_node(an->tape, an->shape, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, s] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            const int64_t n = on->size();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * s;
            NodePtr first = an;
            apply_fault("scale", first);
        });
    }
    return OpAccess::wrap(on);
}

namespace {

// C[m,n] = A[m,k] * B[k,n]; ikj order so the inner loop is contiguous. The
// first k-iteration writes instead of accumulating, so C needs no zero pass.
void matmul_value(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    const int nt = thread_count();
    const bool par = nt > 1 && m * k * n > 65536;
#pragma omp parallel for num_threads(nt) schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        {
            const double ai0 = arow[0];
            for (int64_t j = 0; j < n; ++j) crow[j] = ai0 * b[j];
        }
        for (int64_t kk = 1; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    auto [m, k] = as_2d(an, "matmul lhs");
    auto [k2, n] = as_2d(bn, "matmul rhs");
    if (k != k2)
        throw ShapeError("matmul: inner dims " + shape_str(an->shape) + " x " +
                         shape_str(bn->shape));
    std::vector<double> out(static_cast<size_t>(m * n));
    matmul_value(an->value.data(), bn->value.data(), out.data(), m, k, n);
    auto on = new_node(tape, {static_cast<int>(m), static_cast<int>(n)}, std::move(out),
                       an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on, m, k, n] {
            if (on->grad.empty()) return;
            const double* dc = on->grad.data();
            const int nt = thread_count();
            if (an->requires_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                const double* bv = bn->value.data();
                const bool par = nt > 1 && m * k * n > 65536;
                // dA[i,kk] += dot(dC[i,:], B[kk,:])
#pragma omp parallel for num_threads(nt) schedule(static) if (par)
                for (int64_t i = 0; i < m; ++i) {
                    const double* dcrow = dc + i * n;
                    double* darow = da + i * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const double* brow = bv + kk * n;
                        double s = 0.0;
                        for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
                        darow[kk] += s;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                const double* av = an->value.data();
                const bool par = nt > 1 && m * k * n > 65536;
                // dB[kk,j] += sum_i A[i,kk] * dC[i,j]
#pragma omp parallel for num_threads(nt) schedule(static) if (par)
                for (int64_t kk = 0; kk < k; ++kk) {
                    double* dbrow = db + kk * n;
                    for (int64_t i = 0; i < m; ++i) {
                        const double aik = av[i * k + kk];
                        const double* dcrow = dc + i * n;
                        for (int64_t j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
                    }
                }
            }
            NodePtr first = an;
            apply_fault("matmul", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor transpose(const Tensor& a) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "transpose");
    std::vector<double> out(static_cast<size_t>(r * c));
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[j * r + i] = an->value[i * c + j];
    auto on = new_node(an->tape, {static_cast<int>(c), static_cast<int>(r)}, std::move(out),
                       an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, r, c] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j * r + i];
            NodePtr first = an;
            apply_fault("transpose", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor reshape(const Tensor& a, Shape shape) {
    const NodePtr& an = node_of(a);
    if (numel(shape) != an->size())
        throw ShapeError("reshape: " + shape_str(an->shape) + " to " + shape_str(shape));
    auto on = new_node(an->tape, std::move(shape), an->value, an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            const int64_t n = on->size();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return OpAccess::wrap(on);
}

Tensor gelu(const Tensor& a) {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kCube = 0.044715;
    const NodePtr& an = node_of(a);
    const int64_t n = an->size();
    std::vector<double> out(static_cast<size_t>(n));
    std::vector<double> th(static_cast<size_t>(n));  // cached for backward
    const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && n > 16384)
    for (int64_t i = 0; i < n; ++i) {
        const double x = an->value[i];
        const double u = std::tanh(kC * (x + kCube * x * x * x));
        th[i] = u;
        out[i] = 0.5 * x * (1.0 + u);
    }
    auto on = new_node(an->tape, an->shape, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, n, th = std::move(th)] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && n > 16384)
            for (int64_t i = 0; i < n; ++i) {
                const double x = an->value[i];
                const double u = th[i];
                const double dtanh = (1.0 - u * u) * kC * (1.0 + 3.0 * kCube * x * x);
                an->grad[i] += on->grad[i] * (0.5 * (1.0 + u) + 0.5 * x * dtanh);
            }
            NodePtr first = an;
            apply_fault("gelu", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor log_clamped(const Tensor& a, double eps) {
    const NodePtr& an = node_of(a);
    const int64_t n = an->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(std::max(an->value[i], eps));
    auto on = new_node(an->tape, an->shape, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, n, eps] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const double x = an->value[i];
                if (x > eps) an->grad[i] += on->grad[i] / x;
            }
            NodePtr first = an;
            apply_fault("log", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor softmax(const Tensor& a, double tau) {
    const NodePtr& an = node_of(a);
    if (tau <= 0.0) throw NumericError("softmax: non-positive temperature");
    auto [rows, cols] = row_view(an);
    if (cols < 1) throw ShapeError("softmax: empty axis");
    for (double v : an->value)
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    std::vector<double> out(an->value.size());
    const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && rows* cols > 16384)
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = an->value.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = x[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            y[j] = std::exp((x[j] - mx) / tau);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
    }
    auto on = new_node(an->tape, an->shape, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, rows, cols, tau] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* s = on->value.data() + r * cols;
                const double* dy = on->grad.data() + r * cols;
                double* dx = an->grad.data() + r * cols;
                double dsum = 0.0;
                for (int64_t j = 0; j < cols; ++j) dsum += dy[j] * s[j];
                for (int64_t j = 0; j < cols; ++j) dx[j] += s[j] * (dy[j] - dsum) / tau;
            }
            NodePtr first = an;
            apply_fault("softmax", first);
        });
    }
    return OpAccess::wrap(on);
}

namespace {

void l2_rows_forward(const NodePtr& an, std::vector<double>& out, std::vector<double>& norms,
                     int64_t rows, int64_t cols) {
    out.resize(an->value.size());
    norms.resize(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = an->value.data() + r * cols;
        double sq = 0.0;
        for (int64_t j = 0; j < cols; ++j) sq += x[j] * x[j];
        const double nrm = std::sqrt(sq);
        if (nrm <= kNormEps) throw NumericError("l2_normalize: degenerate vector norm");
        norms[static_cast<size_t>(r)] = nrm;
        double* y = out.data() + r * cols;
        for (int64_t j = 0; j < cols; ++j) y[j] = x[j] / nrm;
    }
}

Tensor l2_rows_impl(const Tensor& a, int64_t rows, int64_t cols, const char* name) {
    const NodePtr& an = node_of(a);
    std::vector<double> out, norms;
    l2_rows_forward(an, out, norms, rows, cols);
    auto on = new_node(an->tape, an->shape, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        std::string op_name = name;
        OpAccess::record(an->tape, [an, on, rows, cols, norms, op_name] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = on->value.data() + r * cols;
                const double* dy = on->grad.data() + r * cols;
                double* dx = an->grad.data() + r * cols;
                const double inv = 1.0 / norms[static_cast<size_t>(r)];
                double proj = 0.0;
                for (int64_t j = 0; j < cols; ++j) proj += dy[j] * y[j];
                for (int64_t j = 0; j < cols; ++j) dx[j] += (dy[j] - y[j] * proj) * inv;
            }
            NodePtr first = an;
            apply_fault(op_name.c_str(), first);
        });
    }
    return OpAccess::wrap(on);
}

}  // namespace

Tensor l2_normalize(const Tensor& v) {
    const NodePtr& an = node_of(v);
    if (an->shape.size() != 1) throw ShapeError("l2_normalize: expected vector");
    return l2_rows_impl(v, 1, an->size(), "l2_normalize");
}

Tensor l2_normalize_rows(const Tensor& a) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "l2_normalize_rows");
    return l2_rows_impl(a, r, c, "l2_normalize_rows");
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    const NodePtr& an = node_of(a);
    const NodePtr& gn = node_of(gain);
    const NodePtr& bn = node_of(bias);
    common_tape(an, gn);
    common_tape(an, bn);
    auto [rows, cols] = row_view(an);
    if (gn->size() != cols || bn->size() != cols)
        throw ShapeError("layer_norm: gain/bias must match last axis");
    constexpr double ln_eps = 1e-6;
    std::vector<double> out(an->value.size());
    std::vector<double> xhat(an->value.size());
    std::vector<double> rstd(static_cast<size_t>(rows));
    const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && rows* cols > 16384)
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = an->value.data() + r * cols;
        double mean = 0.0;
        for (int64_t j = 0; j < cols; ++j) mean += x[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(var + ln_eps);
        rstd[static_cast<size_t>(r)] = rs;
        for (int64_t j = 0; j < cols; ++j) {
            const double h = (x[j] - mean) * rs;
            xhat[r * cols + j] = h;
            out[r * cols + j] = gn->value[j] * h + bn->value[j];
        }
    }
    auto on = new_node(an->tape, an->shape, std::move(out),
                       an->requires_grad || gn->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, gn, bn, on, rows, cols, xhat = std::move(xhat),
                                    rstd = std::move(rstd)] {
            if (on->grad.empty()) return;
            for (int64_t r = 0; r < rows; ++r) {
                const double* dy = on->grad.data() + r * cols;
                const double* h = xhat.data() + r * cols;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int64_t j = 0; j < cols; ++j) gn->grad[j] += dy[j] * h[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int64_t j = 0; j < cols; ++j) bn->grad[j] += dy[j];
                }
                if (an->requires_grad) {
                    an->ensure_grad();
                    double* dx = an->grad.data() + r * cols;
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        const double dh = dy[j] * gn->value[j];
                        m1 += dh;
                        m2 += dh * h[j];
                    }
                    m1 /= static_cast<double>(cols);
                    m2 /= static_cast<double>(cols);
                    const double rs = rstd[static_cast<size_t>(r)];
                    for (int64_t j = 0; j < cols; ++j) {
                        const double dh = dy[j] * gn->value[j];
                        dx[j] += (dh - m1 - h[j] * m2) * rs;
                    }
                }
            }
            NodePtr first = an;
            apply_fault("layer_norm", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor mean_axis(const Tensor& a, int axis) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "mean_axis");
    if (axis != 0 && axis != 1) throw ShapeError("mean_axis: axis must be 0 or 1");
    const int64_t out_len = axis == 0 ? c : r;
    const double denom = axis == 0 ? static_cast<double>(r) : static_cast<double>(c);
    std::vector<double> out(static_cast<size_t>(out_len), 0.0);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += an->value[i * c + j];
    for (double& v : out) v /= denom;
    auto on =
        new_node(an->tape, {static_cast<int>(out_len)}, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, r, c, axis, denom] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += on->grad[axis == 0 ? j : i] / denom;
            NodePtr first = an;
            apply_fault("mean_axis", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor sum_all(const Tensor& a) {
    const NodePtr& an = node_of(a);
    double s = 0.0;
    for (double v : an->value) s += v;
    auto on = new_node(an->tape, {1}, {s}, an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            const double g = on->grad[0];
            for (double& d : an->grad) d += g;
            NodePtr first = an;
            apply_fault("sum_all", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor take_rows(const Tensor& a, std::vector<int> indices) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "take_rows");
    for (int idx : indices)
        if (idx < 0 || idx >= r)
            throw ShapeError("take_rows: index " + std::to_string(idx) + " out of range");
    const int64_t nout = static_cast<int64_t>(indices.size());
    std::vector<double> out(static_cast<size_t>(nout * c));
    for (int64_t i = 0; i < nout; ++i)
        std::copy_n(an->value.data() + static_cast<int64_t>(indices[i]) * c, c,
                    out.data() + i * c);
    auto on = new_node(an->tape, {static_cast<int>(nout), static_cast<int>(c)}, std::move(out),
                       an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, c, indices = std::move(indices)] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i) {
                const double* g = on->grad.data() + static_cast<int64_t>(i) * c;
                double* d = an->grad.data() + static_cast<int64_t>(indices[i]) * c;
                for (int64_t j = 0; j < c; ++j) d[j] += g[j];
            }
            NodePtr first = an;
            apply_fault("take_rows", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    auto [ra, ca] = as_2d(an, "concat_rows lhs");
    auto [rb, cb] = as_2d(bn, "concat_rows rhs");
    if (ca != cb) throw ShapeError("concat_rows: column mismatch");
    std::vector<double> out;
    out.reserve(an->value.size() + bn->value.size());
    out.insert(out.end(), an->value.begin(), an->value.end());
    out.insert(out.end(), bn->value.begin(), bn->value.end());
    auto on = new_node(tape, {static_cast<int>(ra + rb), static_cast<int>(ca)}, std::move(out),
                       an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on] {
            if (on->grad.empty()) return;
            const int64_t na = an->size();
            const int64_t nb = bn->size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < na; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < nb; ++i) bn->grad[i] += on->grad[na + i];
            }
            NodePtr first = an;
            apply_fault("concat_rows", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& t : parts) nodes.push_back(node_of(t));
    Tape* tape = nodes[0]->tape;
    const int64_t c = as_2d(nodes[0], "concat_rows").cols;
    int64_t total_r = 0;
    bool rg = false;
    for (const NodePtr& n : nodes) {
        auto [ri, ci] = as_2d(n, "concat_rows");
        if (ci != c) throw ShapeError("concat_rows: column mismatch");
        if (n->tape != tape) throw ShapeError("operands recorded on different tapes");
        total_r += ri;
        rg = rg || n->requires_grad;
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_r * c));
    for (const NodePtr& n : nodes) out.insert(out.end(), n->value.begin(), n->value.end());
    auto on = new_node(tape, {static_cast<int>(total_r), static_cast<int>(c)}, std::move(out), rg);
    if (rg) {
        OpAccess::record(tape, [nodes, on] {
            if (on->grad.empty()) return;
            int64_t off = 0;
            for (const NodePtr& n : nodes) {
                if (n->requires_grad) {
                    n->ensure_grad();
                    const int64_t sz = n->size();
                    for (int64_t i = 0; i < sz; ++i) n->grad[i] += on->grad[off + i];
                }
                off += n->size();
            }
            NodePtr first = nodes[0];
            apply_fault("concat_rows", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor slice_cols(const Tensor& a, int begin, int count) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "slice_cols");
    if (begin < 0 || count < 1 || begin + count > c) throw ShapeError("slice_cols: range");
    std::vector<double> out(static_cast<size_t>(r * count));
    for (int64_t i = 0; i < r; ++i)
        std::copy_n(an->value.data() + i * c + begin, count, out.data() + i * count);
    auto on =
        new_node(an->tape, {static_cast<int>(r), count}, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, r, c, begin, count] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double* g = on->grad.data() + i * count;
                double* d = an->grad.data() + i * c + begin;
                for (int64_t j = 0; j < count; ++j) d[j] += g[j];
            }
            NodePtr first = an;
            apply_fault("slice_cols", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor slice_block(const Tensor& a, int row0, int rows, int col0, int cols) {
    const NodePtr& an = node_of(a);
    auto [r, c] = as_2d(an, "slice_block");
    if (row0 < 0 || rows < 1 || row0 + rows > r || col0 < 0 || cols < 1 || col0 + cols > c)
        throw ShapeError("slice_block: range");
    std::vector<double> out(static_cast<size_t>(rows) * cols);
    for (int64_t i = 0; i < rows; ++i)
        std::copy_n(an->value.data() + (row0 + i) * c + col0, cols, out.data() + i * cols);
    auto on = new_node(an->tape, {rows, cols}, std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, c, row0, rows, col0, cols] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                const double* g = on->grad.data() + i * cols;
                double* d = an->grad.data() + (row0 + i) * c + col0;
                for (int64_t j = 0; j < cols; ++j) d[j] += g[j];
            }
            NodePtr first = an;
            apply_fault("slice_block", first);
        });
    }
    return OpAccess::wrap(on);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& t : parts) nodes.push_back(node_of(t));
    Tape* tape = nodes[0]->tape;
    const int64_t r = as_2d(nodes[0], "concat_cols").rows;
    int64_t total_c = 0;
    bool rg = false;
    for (const NodePtr& n : nodes) {
        auto [ri, ci] = as_2d(n, "concat_cols");
        if (ri != r) throw ShapeError("concat_cols: row mismatch");
        if (n->tape != tape) throw ShapeError("operands recorded on different tapes");
        total_c += ci;
        rg = rg || n->requires_grad;
    }
    std::vector<double> out(static_cast<size_t>(r * total_c));
    int64_t off = 0;
    for (const NodePtr& n : nodes) {
        const int64_t ci = n->shape[1];
        for (int64_t i = 0; i < r; ++i)
            std::copy_n(n->value.data() + i * ci, ci, out.data() + i * total_c + off);
        off += ci;
    }
    auto on = new_node(tape, {static_cast<int>(r), static_cast<int>(total_c)}, std::move(out), rg);
    if (rg) {
        OpAccess::record(tape, [nodes, on, r, total_c] {
            if (on->grad.empty()) return;
            int64_t off = 0;
            for (const NodePtr& n : nodes) {
                const int64_t ci = n->shape[1];
                if (n->requires_grad) {
                    n->ensure_grad();
                    for (int64_t i = 0; i < r; ++i) {
                        const double* g = on->grad.data() + i * total_c + off;
                        double* d = n->grad.data() + i * ci;
                        for (int64_t j = 0; j < ci; ++j) d[j] += g[j];
                    }
                }
                off += ci;
            }
            NodePtr first = nodes[0];
            apply_fault("concat_cols", first);
        });
    }
    return OpAccess::wrap(on);
}

namespace {

struct PatchDims {
    int64_t channels, height, width, patch, grid_h, grid_w, tokens, tok_len;
};

PatchDims patch_dims(const NodePtr& an, int patch_side) {
    if (an->shape.size() != 3) throw ShapeError("patchify: expected [C,H,W] image");
    PatchDims d;
    d.channels = an->shape[0];
    d.height = an->shape[1];
    d.width = an->shape[2];
    d.patch = patch_side;
    if (patch_side <= 0 || d.height % patch_side != 0 || d.width % patch_side != 0)
        throw ShapeError("patchify: image " + shape_str(an->shape) +
                         " not divisible by patch side " + std::to_string(patch_side));
    d.grid_h = d.height / patch_side;
    d.grid_w = d.width / patch_side;
    d.tokens = d.grid_h * d.grid_w;
    d.tok_len = d.channels * patch_side * patch_side;
    return d;
}

int64_t patch_src_index(const PatchDims& d, int64_t t, int64_t e) {
    const int64_t c = e / (d.patch * d.patch);
    const int64_t py = (e / d.patch) % d.patch;
    const int64_t px = e % d.patch;
    const int64_t gy = t / d.grid_w;
    const int64_t gx = t % d.grid_w;
    return c * d.height * d.width + (gy * d.patch + py) * d.width + (gx * d.patch + px);
}

}  // namespace

Tensor patchify(const Tensor& image, int patch_side) {
    const NodePtr& an = node_of(image);
    const PatchDims d = patch_dims(an, patch_side);
    std::vector<double> out(static_cast<size_t>(d.tokens * d.tok_len));
    for (int64_t t = 0; t < d.tokens; ++t)
        for (int64_t e = 0; e < d.tok_len; ++e)
            out[t * d.tok_len + e] = an->value[patch_src_index(d, t, e)];
    auto on = new_node(an->tape, {static_cast<int>(d.tokens), static_cast<int>(d.tok_len)},
                       std::move(out), an->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(an->tape, [an, on, d] {
            if (on->grad.empty()) return;
            an->ensure_grad();
            for (int64_t t = 0; t < d.tokens; ++t)
                for (int64_t e = 0; e < d.tok_len; ++e)
                    an->grad[patch_src_index(d, t, e)] += on->grad[t * d.tok_len + e];
            NodePtr first = an;
            apply_fault("patchify", first);
        });
    }
    return OpAccess::wrap(on);
}

std::vector<double> unpatchify(std::span<const double> tokens, int channels, int height,
                               int width, int patch_side) {
    auto probe = std::make_shared<Node>();
    probe->shape = {channels, height, width};
    const PatchDims d = patch_dims(probe, patch_side);
    if (static_cast<int64_t>(tokens.size()) != d.tokens * d.tok_len)
        throw ShapeError("unpatchify: token buffer size mismatch");
    std::vector<double> img(static_cast<size_t>(channels) * height * width);
    for (int64_t t = 0; t < d.tokens; ++t)
        for (int64_t e = 0; e < d.tok_len; ++e)
            img[patch_src_index(d, t, e)] = tokens[t * d.tok_len + e];
    return img;
}

Tensor stop_gradient(const Tensor& a) {
    const NodePtr& an = node_of(a);
    // detached copy: no op recorded, so backward never reaches upstream
    return OpAccess::wrap(new_node(an->tape, an->shape, an->value, false));
}

Tensor dot(const Tensor& a, const Tensor& b) {
    const NodePtr& an = node_of(a);
    const NodePtr& bn = node_of(b);
    Tape* tape = common_tape(an, bn);
    if (!same_shape(an->shape, bn->shape)) throw ShapeError("dot: shape mismatch");
    double s = 0.0;
    const int64_t n = an->size();
    for (int64_t i = 0; i < n; ++i) s += an->value[i] * bn->value[i];
    auto on = new_node(tape, {1}, {s}, an->requires_grad || bn->requires_grad);
    if (on->requires_grad) {
        OpAccess::record(tape, [an, bn, on, n] {
            if (on->grad.empty()) return;
            const double g = on->grad[0];
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += g * an->value[i];
            }
            NodePtr first = an;
            apply_fault("dot", first);
        });
    }
    return OpAccess::wrap(on);
}

}  // namespace pros
