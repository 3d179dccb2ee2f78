#include "sca/sca_layer.hpp"

#include <cmath>

namespace sca {

ScaParams ScaParams::create(std::size_t d_x, std::size_t d_a, double lambda, double eta,
                            int steps) {
    ScaParams p;
    p.w_f = Tensor(Shape{d_a, d_x});
    p.b_f = Tensor(Shape{d_a});
    p.w_g = Tensor(Shape{d_a, d_a});
    p.b_g = Tensor(Shape{d_a});
    p.w_h = Tensor(Shape{d_x, d_a});
    p.b_h = Tensor(Shape{d_x});
    p.lambda = lambda;
    p.eta = eta;
    p.steps = steps;
    p.validate();
    return p;
}

void ScaParams::init(Rng& rng) {
    auto fill = [&rng](Tensor& t, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-bound, bound);
    };
    fill(w_f, d_x());
    fill(b_f, d_x());
    fill(w_g, d_a());
    fill(b_g, d_a());
    fill(w_h, d_a());
    fill(b_h, d_a());
    project_diag_zero(w_g);
}

std::vector<Tensor*> ScaParams::param_list() { return {&w_f, &b_f, &w_g, &b_g, &w_h, &b_h}; }

void ScaParams::validate() const {
    const std::size_t da = w_f.rows(), dx = w_f.cols();
    if (w_g.rank() != 2 || w_g.rows() != da || w_g.cols() != da) {
        throw ShapeError("ScaParams: w_g must be " + std::to_string(da) + " square, got " +
                         shape_str(w_g.shape()));
    }
    if (w_h.rank() != 2 || w_h.rows() != dx || w_h.cols() != da) {
        throw ShapeError("ScaParams: w_h must be [" + std::to_string(dx) + ", " +
                         std::to_string(da) + "], got " + shape_str(w_h.shape()));
    }
    if (b_f.size() != da || b_g.size() != da || b_h.size() != dx) {
        throw ShapeError("ScaParams: bias shapes inconsistent with weight shapes");
    }
    if (!(eta > 0.0)) throw ValueError("ScaParams: eta must be positive");
    if (lambda < 0.0) throw ValueError("ScaParams: lambda must be non-negative");
    if (steps < 0) throw ValueError("ScaParams: steps must be non-negative");
}

void project_diag_zero(Tensor& w) {
    if (w.rank() != 2 || w.rows() != w.cols()) {
        throw ShapeError("project_diag_zero: matrix must be square, got " + shape_str(w.shape()));
    }
    const std::size_t d = w.rows();
    for (std::size_t i = 0; i < d; ++i) w.at2(i, i) = 0.0;
}

bool diag_is_zero(const Tensor& w) {
    if (w.rank() != 2 || w.rows() != w.cols()) return false;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        if (w.at2(i, i) != 0.0) return false;
    }
    return true;
}

namespace {

void check_batch_shapes(const char* op, const Tensor& a, const Tensor& x, const ScaParams& p) {
    if (a.rank() != 2 || a.cols() != p.d_a()) {
        throw ShapeError(std::string(op) + ": activations must be [batch, " +
                         std::to_string(p.d_a()) + "], got " + shape_str(a.shape()));
    }
    if (x.rank() != 2 || x.cols() != p.d_x()) {
        throw ShapeError(std::string(op) + ": inputs must be [batch, " + std::to_string(p.d_x()) +
                         "], got " + shape_str(x.shape()));
    }
    if (a.rows() != x.rows()) {
        throw ShapeError(std::string(op) + ": batch sizes disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(x.shape()));
    }
}

} // namespace

Tensor sca_energy(const Tensor& a, const Tensor& x, const ScaParams& p) {
    p.validate();
    check_batch_shapes("sca_energy", a, x, p);
    Tensor z = add_rowvec(matmul(a, p.w_g, false, true), p.b_g);
    Tensor r1 = sub(a, relu(z));
    Tensor rec = sub(x, add_rowvec(matmul(a, p.w_h, false, true), p.b_h));
    return add(sum(square(r1)), scale(sum(square(rec)), p.lambda));
}

Tensor sca_energy_grad(const Tensor& a, const Tensor& x, const ScaParams& p) {
    p.validate();
    check_batch_shapes("sca_energy_grad", a, x, p);
    Tensor z = add_rowvec(matmul(a, p.w_g, false, true), p.b_g);
    Tensor r1 = sub(a, relu(z));
    Tensor masked = mul(relu_mask(z), r1); // relu'(z) . r1, mask held constant
    Tensor coupling = matmul(masked, p.w_g); // row i: W_g^T (mask . r1)_i
    Tensor rec = sub(x, add_rowvec(matmul(a, p.w_h, false, true), p.b_h));
    Tensor recon = matmul(rec, p.w_h); // row i: W_h^T rec_i
    return sub(sub(scale(r1, 2.0), scale(coupling, 2.0)), scale(recon, 2.0 * p.lambda));
}

Tensor sca_forward(const Tensor& x, const ScaParams& p) {
    p.validate();
    if (x.rank() != 2 || x.cols() != p.d_x()) {
        throw ShapeError("sca_forward: inputs must be [batch, " + std::to_string(p.d_x()) +
                         "], got " + shape_str(x.shape()));
    }
    Tensor u = add_rowvec(matmul(x, p.w_f, false, true), p.b_f);
    for (int t = 0; t < p.steps; ++t) {
        Tensor a = relu(u);
        Tensor g = sca_energy_grad(a, x, p);
        u = sub(a, scale(g, p.eta));
    }
    return relu(u);
}

} // namespace sca
