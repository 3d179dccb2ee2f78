#pragma once

#include <cstddef>
#include <vector>

#include "sca/rng.hpp"
#include "sca/tensor.hpp"

namespace sca {

// Parameters of one self-consistent activation layer. The layer maps a batch
// of d_x-dimensional inputs to d_a-dimensional activations by unrolling a
// fixed number of gradient steps on a per-example reconstruction energy:
//
//   J(a, x) = ||a - relu(W_g a + b_g)||^2 + lambda * ||x - W_h a - b_h||^2
//
// starting from u = W_f x + b_f and iterating
//
//   a <- relu(u);  u <- a - eta * dJ/da
//
// `steps` times, returning relu(u). W_g couples activations to each other and
// carries a zero diagonal so no unit predicts itself.
struct ScaParams {
    Tensor w_f, b_f; // d_a x d_x, d_a
    Tensor w_g, b_g; // d_a x d_a (zero diagonal), d_a
    Tensor w_h, b_h; // d_x x d_a, d_x
    double lambda = 1.0;
    double eta = 0.1;
    int steps = 16;

    static ScaParams create(std::size_t d_x, std::size_t d_a, double lambda = 1.0,
                            double eta = 0.1, int steps = 16);

    std::size_t d_x() const { return w_f.cols(); }
    std::size_t d_a() const { return w_f.rows(); }

    // Uniform +-1/sqrt(fan_in) for weights and biases, then the diagonal
    // projection on w_g.
    void init(Rng& rng);

    std::vector<Tensor*> param_list();
    void validate() const;
};

// Zeroes the diagonal of a square matrix in place.
void project_diag_zero(Tensor& w);
bool diag_is_zero(const Tensor& w);

// Reconstruction energy summed over the batch; scalar. `a` is batch x d_a,
// `x` is batch x d_x. Differentiable through the tape.
Tensor sca_energy(const Tensor& a, const Tensor& x, const ScaParams& p);

// Closed-form dJ/da, batch x d_a:
//   2(a - relu(z)) - 2 W_g^T [relu'(z) . (a - relu(z))] - 2 lambda W_h^T (x - W_h a - b_h)
// with z = W_g a + b_g. Built from differentiable ops so gradients of outer
// expressions flow through it; the relu' factor is a locally-constant mask.
Tensor sca_energy_grad(const Tensor& a, const Tensor& x, const ScaParams& p);

// The layer's forward pass: unrolled refinement as described above.
// With steps == 0 this is exactly relu(W_f x + b_f).
Tensor sca_forward(const Tensor& x, const ScaParams& p);

} // namespace sca
