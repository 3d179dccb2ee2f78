#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sca/errors.hpp"

namespace sca {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

// When enabled, every operation validates that its output (and, during the
// backward sweep, every gradient buffer) is finite, throwing NumericError
// otherwise. Off by default; flip it on for debugging or paranoid runs.
void set_checked_mode(bool enabled);
bool checked_mode();

class Tape;

// Dense tensor of doubles, rank 0..2 in practice (scalars, vectors,
// row-major matrices). Copies share the underlying buffer; use clone() for a
// deep copy. A tensor optionally carries a link (node id + tape serial) to
// the autodiff tape that recorded it; the link is ignored by any tape other
// than the one it belongs to.
class Tensor {
  public:
    Tensor() : Tensor(Shape{0}) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_->size(); }
    bool is_scalar() const { return size() == 1; }

    std::size_t rows() const;
    std::size_t cols() const;

    double item() const;
    double at(std::size_t i) const { return (*data_)[i]; }
    double& at(std::size_t i) { return (*data_)[i]; }
    double at2(std::size_t i, std::size_t j) const { return (*data_)[i * cols() + j]; }
    double& at2(std::size_t i, std::size_t j) { return (*data_)[i * cols() + j]; }

    const std::vector<double>& values() const { return *data_; }
    std::vector<double>& values() { return *data_; }
    const double* data() const { return data_->data(); }
    double* data() { return data_->data(); }

    Tensor clone() const;      // deep copy; the copy is untraced
    Tensor detached() const;   // shares the buffer but drops the tape link
    bool all_finite() const;

    // Autodiff linkage (managed by Tape and the op implementations).
    int node() const { return node_; }
    std::uint64_t tape_serial() const { return serial_; }
    void bind(int node, std::uint64_t serial) {
        node_ = node;
        serial_ = serial;
    }

    std::shared_ptr<std::vector<double>> buffer() const { return data_; }

  private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    int node_ = -1;
    std::uint64_t serial_ = 0;
};

// Gradients of a scalar root with respect to every leaf watched on one tape.
// Leaves that did not influence the root get a zero gradient; querying a
// tensor that was never watched on that tape is an error.
class Gradients {
  public:
    Tensor grad(const Tensor& leaf) const;
    bool influenced(const Tensor& leaf) const; // false => grad is all zeros

  private:
    friend class Tape;
    std::uint64_t serial_ = 0;
    std::vector<std::optional<std::vector<double>>> by_node_;
    std::vector<Shape> shapes_;
    std::vector<bool> is_leaf_;
};

// Reverse-mode autodiff tape. Records one forward pass and is consumed by a
// single backward() call; build a fresh tape (via TapeScope) per forward
// pass. Nodes are stored in creation order, which is a topological order, so
// the backward sweep visits each node exactly once in reverse.
class Tape {
  public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a tensor as a differentiable leaf. Tensors that are not
    // watched (and are not results of recorded ops) are treated as constants.
    void watch(Tensor& t);

    // Computes gradients of the scalar `root` w.r.t. all watched leaves.
    // The tape is consumed: calling backward a second time is an error.
    Gradients backward(const Tensor& root);

    std::uint64_t serial() const { return serial_; }
    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // --- recording interface used by op implementations ---
    // Passed to a node's backward rule during the sweep; exposes the node's
    // output gradient and (lazily allocated) parent gradient buffers.
    class BackCtx {
      public:
        const std::vector<double>& gout() const { return *gout_; }
        bool needs(int slot) const;               // parent at slot is traced
        std::vector<double>& pgrad(int slot);     // accumulation buffer

      private:
        friend class Tape;
        Tape* tape_ = nullptr;
        const std::vector<double>* gout_ = nullptr;
        const std::array<int, 3>* parents_ = nullptr;
        std::vector<std::optional<std::vector<double>>>* grads_ = nullptr;
        const std::vector<Shape>* shapes_ = nullptr;
    };
    using BackwardFn = std::function<void(BackCtx&)>;

    // Records an op node; `parents` are node ids (-1 for constant inputs).
    // Returns the new node's id.
    int record(Shape out_shape, std::array<int, 3> parents, int n_parents, BackwardFn fn);

  private:
    struct Node {
        std::array<int, 3> parents{-1, -1, -1};
        int n_parents = 0;
        Shape shape;
        BackwardFn fn; // null for leaves
    };
    std::vector<Node> nodes_;
    std::uint64_t serial_ = 0;
    bool consumed_ = false;
};

// Activates a fresh tape for the current thread for the lifetime of the
// scope. Ops record onto the innermost active tape; with no active scope
// they compute values only.
class TapeScope {
  public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape& tape() { return tape_; }

  private:
    Tape tape_;
    Tape* prev_ = nullptr;
};

// Temporarily deactivates the active tape (if any) for the current thread,
// so that ops inside the scope compute values without recording.
class TapeSuspend {
  public:
    TapeSuspend();
    ~TapeSuspend();
    TapeSuspend(const TapeSuspend&) = delete;
    TapeSuspend& operator=(const TapeSuspend&) = delete;

  private:
    Tape* prev_ = nullptr;
};

// The innermost active tape for this thread, or nullptr.
Tape* active_tape();

namespace detail {
// Node id of `t` on the active tape, or -1 if untraced / from another tape.
int traced_node(const Tensor& t);
// Binds `out` to a freshly recorded node when any input is traced.
void record_unary(Tensor& out, const Tensor& a, Tape::BackwardFn fn);
void record_binary(Tensor& out, const Tensor& a, const Tensor& b, Tape::BackwardFn fn);
void check_output(const char* op, const Tensor& out);
} // namespace detail

// ---- differentiable operations ----
// Every op computes eagerly; when a TapeScope is active and at least one
// input is traced, the op also records a backward rule.

// Matrix product with optional transposes; A and B must be rank 2.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Elementwise ops; shapes must match exactly, except that a size-1 tensor
// broadcasts against any shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);  // c * a
Tensor shift(const Tensor& a, double c);  // a + c
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor t_exp(const Tensor& a);
Tensor t_log(const Tensor& a); // domain error on non-positive input

Tensor sum(const Tensor& a);  // scalar
Tensor mean(const Tensor& a); // scalar

// Adds a length-n vector to every row of an m-by-n matrix.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// Row-wise softmax of an m-by-n matrix (numerically stabilised).
Tensor softmax_rows(const Tensor& logits);

// Per-example cross-entropy between rows of `logits` and integer labels,
// computed via log-sum-exp (softmax is fused into this op; gradients use
// softmax(logits) - onehot directly). Returns a length-m vector.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

// ---- non-differentiable helpers ----
Tensor relu_mask(const Tensor& a);           // 1 where a > 0, else 0; constant
Tensor stop_gradient(const Tensor& a);       // same values, no tape link
std::vector<int> argmax_rows(const Tensor& logits);

// ---- gradient verification ----
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;       // coordinates compared
    std::size_t kinks_skipped = 0; // coordinates near non-smooth points
    bool pass = false;
    std::string worst; // description of the worst coordinate
};

// Compares the tape gradient of scalar-valued f at x0 against central finite
// differences, coordinate by coordinate. Coordinates where the one-sided
// differences disagree (a kink, e.g. relu at 0) are excluded from the
// comparison and counted in kinks_skipped. Relative error is
// |g - d| / max(|g|, |d|, 1e-6).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                           double step = 1e-5, double tol = 1e-4);

} // namespace sca
