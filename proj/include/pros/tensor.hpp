#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pros/errors.hpp"

namespace pros {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Worker count for the inner loops of large ops. Initialised from the
// PROS_THREADS environment variable (default 1); deterministic at any value
// because parallel loops write disjoint output ranges.
int thread_count();
void set_thread_count(int n);

class Tape;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    Tape* tape = nullptr;

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

struct OpAccess;

// Test fixture: names an op whose backward rule is deliberately corrupted.
void set_backward_fault(const std::string& op_name);
const std::string& backward_fault();

}  // namespace detail

// Dense row-major f64 tensor, a shared handle to a tape node. Immutable after
// creation except for gradient accumulation during backward.
class Tensor {
   public:
    Tensor() = default;

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return node_->size(); }

    std::span<const double> values() const { return node_->value; }
    double value_at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
    // value of a size-1 tensor
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const;

   private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
    detail::NodePtr node_;

    friend class Tape;
    friend struct detail::OpAccess;
};

// Records one backward closure per differentiable op, in creation order (the
// order is topological by construction). Values are computed eagerly; the
// tape only replays gradients. Exactly one backward pass per tape.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor constant(Shape shape, std::vector<double> value);
    Tensor constant_scalar(double v) { return constant({1}, {v}); }
    // leaf with requires_grad set
    Tensor variable(Shape shape, std::vector<double> value);
    Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad);

    void backward(const Tensor& output);
    bool backward_done() const { return backward_done_; }
    int64_t op_count() const { return static_cast<int64_t>(ops_.size()); }

   private:
    struct OpRecord {
        std::function<void()> backward;
    };
    std::vector<OpRecord> ops_;
    bool backward_done_ = false;

    friend struct detail::OpAccess;
};

// ---- differentiable primitives ------------------------------------------
// Binary ops require operands from the same tape. add/sub broadcast the
// right operand over leading axes when its shape matches a trailing suffix
// of the left; anything else is an explicit reshape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, Shape shape);
Tensor gelu(const Tensor& a);
// log(max(x, eps)); gradient is zero on the clamped region
Tensor log_clamped(const Tensor& a, double eps = 1e-12);
// softmax over the last axis with temperature tau; max-subtracted
Tensor softmax(const Tensor& a, double tau);
Tensor l2_normalize(const Tensor& v);       // vector
Tensor l2_normalize_rows(const Tensor& a);  // [r,c], each row
// last-axis layer norm with learnable gain/bias
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor mean_axis(const Tensor& a, int axis);  // 2-D, axis 0 or 1
Tensor sum_all(const Tensor& a);              // scalar
Tensor take_rows(const Tensor& a, std::vector<int> indices);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int begin, int count);
// contiguous rectangular block of a 2-D tensor
Tensor slice_block(const Tensor& a, int row0, int rows, int col0, int cols);
Tensor concat_cols(const std::vector<Tensor>& parts);
// image [C,H,W] -> [T, C*p*p] non-overlapping patch rows (row-major grid)
Tensor patchify(const Tensor& image, int patch_side);
// same data, detached: backward deposits zero gradient upstream
Tensor stop_gradient(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);  // sum_all(mul(a, b))

// exact inverse of patchify (value-level helper, not differentiable)
std::vector<double> unpatchify(std::span<const double> tokens, int channels, int height,
                               int width, int patch_side);

constexpr double kNormEps = 1e-12;
constexpr double kLogEps = 1e-12;

}  // namespace pros
