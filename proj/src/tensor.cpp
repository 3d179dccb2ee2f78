#include "sca/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace sca {

namespace {
std::atomic<bool> g_checked{false};
std::atomic<std::uint64_t> g_tape_serial{1};
thread_local Tape* t_active_tape = nullptr;
} // namespace

void set_checked_mode(bool enabled) { g_checked.store(enabled, std::memory_order_relaxed); }
bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// ---- Tensor ----

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_size(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (values.size() != shape_size(shape_)) {
        throw ShapeError("Tensor: " + std::to_string(values.size()) +
                         " values provided for shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor has shape " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor has shape " + shape_str(shape_));
    return shape_[1];
}

double Tensor::item() const {
    if (!is_scalar()) throw ShapeError("item(): tensor has shape " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::clone() const {
    Tensor out(shape_);
    *out.data_ = *data_;
    return out;
}

Tensor Tensor::detached() const {
    Tensor out = *this;
    out.node_ = -1;
    out.serial_ = 0;
    return out;
}

bool Tensor::all_finite() const {
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- Tape ----

Tape::Tape() : serial_(g_tape_serial.fetch_add(1, std::memory_order_relaxed)) {}

void Tape::watch(Tensor& t) {
    if (consumed_) throw GraphError("watch() on a consumed tape");
    if (t.tape_serial() == serial_ && t.node() >= 0) return; // already watched here
    Node leaf;
    leaf.shape = t.shape();
    nodes_.push_back(std::move(leaf));
    t.bind(static_cast<int>(nodes_.size()) - 1, serial_);
}

int Tape::record(Shape out_shape, std::array<int, 3> parents, int n_parents, BackwardFn fn) {
    if (consumed_) throw GraphError("record() on a consumed tape");
    Node node;
    node.parents = parents;
    node.n_parents = n_parents;
    node.shape = std::move(out_shape);
    node.fn = std::move(fn);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::BackCtx::needs(int slot) const { return (*parents_)[static_cast<std::size_t>(slot)] >= 0; }

std::vector<double>& Tape::BackCtx::pgrad(int slot) {
    const int pid = (*parents_)[static_cast<std::size_t>(slot)];
    if (pid < 0) throw GraphError("pgrad() requested for a constant input");
    auto& cell = (*grads_)[static_cast<std::size_t>(pid)];
    if (!cell.has_value()) cell.emplace(shape_size((*shapes_)[static_cast<std::size_t>(pid)]), 0.0);
    return *cell;
}

Gradients Tape::backward(const Tensor& root) {
    if (consumed_) throw GraphError("backward() called twice on the same tape");
    if (!root.is_scalar()) {
        throw GraphError("backward(): root must be scalar, got shape " + shape_str(root.shape()));
    }
    if (root.tape_serial() != serial_ || root.node() < 0) {
        throw GraphError("backward(): root is not traced on this tape");
    }
    consumed_ = true;

    std::vector<Shape> shapes(nodes_.size());
    std::vector<bool> is_leaf(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        shapes[i] = nodes_[i].shape;
        is_leaf[i] = (nodes_[i].fn == nullptr);
    }

    std::vector<std::optional<std::vector<double>>> grads(nodes_.size());
    grads[static_cast<std::size_t>(root.node())].emplace(1, 1.0);

    for (std::size_t k = nodes_.size(); k-- > 0;) {
        auto& cell = grads[k];
        if (!cell.has_value()) continue;
        const Node& node = nodes_[k];
        if (!node.fn) continue; // leaf: keep the accumulated gradient
        BackCtx ctx;
        ctx.tape_ = this;
        ctx.gout_ = &*cell;
        ctx.parents_ = &node.parents;
        ctx.grads_ = &grads;
        ctx.shapes_ = &shapes;
        node.fn(ctx);
        if (checked_mode()) {
            for (int s = 0; s < node.n_parents; ++s) {
                const int pid = node.parents[static_cast<std::size_t>(s)];
                if (pid < 0) continue;
                const auto& pg = grads[static_cast<std::size_t>(pid)];
                if (!pg.has_value()) continue;
                for (double v : *pg) {
                    if (!std::isfinite(v)) {
                        throw NumericError("backward: non-finite gradient at node " +
                                           std::to_string(pid));
                    }
                }
            }
        }
        cell.reset(); // this node's output gradient is no longer needed
    }

    Gradients out;
    out.serial_ = serial_;
    out.shapes_ = std::move(shapes);
    out.is_leaf_ = std::move(is_leaf);
    out.by_node_ = std::move(grads);
    return out;
}

// ---- Gradients ----

Tensor Gradients::grad(const Tensor& leaf) const {
    if (leaf.tape_serial() != serial_ || leaf.node() < 0) {
        throw GraphError("grad(): tensor was not watched on this tape");
    }
    const auto idx = static_cast<std::size_t>(leaf.node());
    if (!is_leaf_[idx]) {
        throw GraphError("grad(): tensor is an op result, not a watched leaf");
    }
    const auto& cell = by_node_[idx];
    if (!cell.has_value()) return Tensor(shapes_[idx], 0.0); // leaf never used
    return Tensor(shapes_[idx], *cell);
}

bool Gradients::influenced(const Tensor& leaf) const {
    if (leaf.tape_serial() != serial_ || leaf.node() < 0) {
        throw GraphError("influenced(): tensor was not watched on this tape");
    }
    return by_node_[static_cast<std::size_t>(leaf.node())].has_value();
}

// ---- TapeScope ----

TapeScope::TapeScope() {
    prev_ = t_active_tape;
    t_active_tape = &tape_;
}

TapeScope::~TapeScope() { t_active_tape = prev_; }

TapeSuspend::TapeSuspend() {
    prev_ = t_active_tape;
    t_active_tape = nullptr;
}

TapeSuspend::~TapeSuspend() { t_active_tape = prev_; }

Tape* active_tape() { return t_active_tape; }

namespace detail {

int traced_node(const Tensor& t) {
    Tape* tape = active_tape();
    if (!tape) return -1;
    if (t.tape_serial() != tape->serial()) return -1;
    return t.node();
}

void check_output(const char* op, const Tensor& out) {
    if (checked_mode() && !out.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value in output");
    }
}

void record_unary(Tensor& out, const Tensor& a, Tape::BackwardFn fn) {
    Tape* tape = active_tape();
    if (!tape) return;
    const int pa = traced_node(a);
    if (pa < 0) return;
    const int id = tape->record(out.shape(), {pa, -1, -1}, 1, std::move(fn));
    out.bind(id, tape->serial());
}

void record_binary(Tensor& out, const Tensor& a, const Tensor& b, Tape::BackwardFn fn) {
    Tape* tape = active_tape();
    if (!tape) return;
    const int pa = traced_node(a);
    const int pb = traced_node(b);
    if (pa < 0 && pb < 0) return;
    const int id = tape->record(out.shape(), {pa, pb, -1}, 2, std::move(fn));
    out.bind(id, tape->serial());
}

} // namespace detail

} // namespace sca
