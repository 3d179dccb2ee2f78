#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "sca/tensor.hpp"

namespace sca {

namespace {

using Buf = std::shared_ptr<std::vector<double>>;

// C(m x n) += op(A)(m x k) * op(B)(k x n), with beta scaling of C.
void dgemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
               std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void require_same_or_scalar(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape() || a.is_scalar() || b.is_scalar()) return;
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match");
}

// Output shape for an elementwise binary op with size-1 broadcasting.
const Tensor& broadcast_major(const Tensor& a, const Tensor& b) {
    if (a.is_scalar() && !b.is_scalar()) return b;
    return a;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: operands must be rank 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = trans_a ? a.cols() : a.rows();
    const std::size_t k = trans_a ? a.rows() : a.cols();
    const std::size_t kb = trans_b ? b.cols() : b.rows();
    const std::size_t n = trans_b ? b.rows() : b.cols();
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
    }
    Tensor out(Shape{m, n});
    dgemm_acc(trans_a, trans_b, m, n, k, a.data(), a.cols(), b.data(), b.cols(), 0.0, out.data(),
              n);
    detail::check_output("matmul", out);

    Buf abuf = a.buffer();
    Buf bbuf = b.buffer();
    const std::size_t a_rows = a.rows(), a_cols = a.cols();
    const std::size_t b_rows = b.rows(), b_cols = b.cols();
    detail::record_binary(out, a, b, [=](Tape::BackCtx& ctx) {
        const double* g = ctx.gout().data();
        if (ctx.needs(0)) {
            double* da = ctx.pgrad(0).data();
            if (!trans_a) {
                // dA(m x k) = G * op(B)^T
                dgemm_acc(false, !trans_b, m, k, n, g, n, bbuf->data(), b_cols, 1.0, da, a_cols);
            } else {
                // A stored as (k x m): dA = op(B) * G^T
                dgemm_acc(trans_b, true, k, m, n, bbuf->data(), b_cols, g, n, 1.0, da, a_cols);
            }
        }
        if (ctx.needs(1)) {
            double* db = ctx.pgrad(1).data();
            if (!trans_b) {
                // dB(k x n) = op(A)^T * G
                dgemm_acc(!trans_a, false, k, n, m, abuf->data(), a_cols, g, n, 1.0, db, b_cols);
            } else {
                // B stored as (n x k): dB = G^T * op(A)
                dgemm_acc(true, trans_a, n, k, m, g, n, abuf->data(), a_cols, 1.0, db, b_cols);
            }
        }
        (void)a_rows;
        (void)b_rows;
    });
    return out;
}

namespace {

// Shared skeleton for elementwise binary ops with size-1 broadcasting.
// fwd(x, y) computes the output; dx/dy give the partials at (x, y).
template <class F, class Dx, class Dy>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, F fwd, Dx dxf,
                          Dy dyf) {
    require_same_or_scalar(name, a, b);
    const Tensor& major = broadcast_major(a, b);
    const std::size_t n = major.size();
    const bool a_scalar = a.is_scalar() && n > 1;
    const bool b_scalar = b.is_scalar() && n > 1;
    Tensor out(major.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        op[i] = fwd(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);
    }
    detail::check_output(name, out);

    Buf abuf = a.buffer();
    Buf bbuf = b.buffer();
    detail::record_binary(out, a, b, [=](Tape::BackCtx& ctx) {
        const auto& g = ctx.gout();
        const double* av = abuf->data();
        const double* bv = bbuf->data();
        if (ctx.needs(0)) {
            auto& da = ctx.pgrad(0);
            for (std::size_t i = 0; i < n; ++i) {
                da[a_scalar ? 0 : i] += g[i] * dxf(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
            }
        }
        if (ctx.needs(1)) {
            auto& db = ctx.pgrad(1);
            for (std::size_t i = 0; i < n; ++i) {
                db[b_scalar ? 0 : i] += g[i] * dyf(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
            }
        }
    });
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

namespace {

template <class F, class D>
Tensor unary_elementwise(const char* name, const Tensor& a, F fwd, D dfx) {
    const std::size_t n = a.size();
    Tensor out(a.shape());
    const double* ap = a.data();
    double* op = out.data();
    for (std::size_t i = 0; i < n; ++i) op[i] = fwd(ap[i]);
    detail::check_output(name, out);

    Buf abuf = a.buffer();
    Buf obuf = out.buffer();
    detail::record_unary(out, a, [=](Tape::BackCtx& ctx) {
        const auto& g = ctx.gout();
        auto& da = ctx.pgrad(0);
        const double* av = abuf->data();
        const double* ov = obuf->data();
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * dfx(av[i], ov[i]);
    });
    return out;
}

} // namespace

Tensor scale(const Tensor& a, double c) {
    return unary_elementwise(
        "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor shift(const Tensor& a, double c) {
    return unary_elementwise(
        "shift", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    // Subgradient at 0 is taken to be 0 (the output test `o > 0` excludes it).
    return unary_elementwise(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double, double o) { return o > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
    return unary_elementwise(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor t_exp(const Tensor& a) {
    return unary_elementwise(
        "t_exp", a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Tensor t_log(const Tensor& a) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a.at(i) > 0.0)) {
            throw NumericError("t_log: non-positive input " + std::to_string(a.at(i)) +
                               " at index " + std::to_string(i));
        }
    }
    return unary_elementwise(
        "t_log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    Tensor out = Tensor::scalar(acc);
    detail::check_output("sum", out);
    const std::size_t n = a.size();
    detail::record_unary(out, a, [n](Tape::BackCtx& ctx) {
        const double g = ctx.gout()[0];
        auto& da = ctx.pgrad(0);
        for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
    return out;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
    const std::size_t n = a.size();
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    detail::check_output("mean", out);
    detail::record_unary(out, a, [n](Tape::BackCtx& ctx) {
        const double g = ctx.gout()[0] / static_cast<double>(n);
        auto& da = ctx.pgrad(0);
        for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rank() != 1 || v.shape()[0] != x.cols()) {
        throw ShapeError("add_rowvec: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(v.shape()) + " are not matrix + row vector");
    }
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out(x.shape());
    const double* xp = x.data();
    const double* vp = v.data();
    double* op = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) op[i * n + j] = xp[i * n + j] + vp[j];
    }
    detail::check_output("add_rowvec", out);
    detail::record_binary(out, x, v, [m, n](Tape::BackCtx& ctx) {
        const auto& g = ctx.gout();
        if (ctx.needs(0)) {
            auto& dx = ctx.pgrad(0);
            for (std::size_t i = 0; i < m * n; ++i) dx[i] += g[i];
        }
        if (ctx.needs(1)) {
            auto& dv = ctx.pgrad(1);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) dv[j] += g[i * n + j];
            }
        }
    });
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_rows: expected a matrix, got " + shape_str(logits.shape()));
    }
    const std::size_t m = logits.rows(), n = logits.cols();
    Tensor out(logits.shape());
    const double* zp = logits.data();
    double* op = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* z = zp + i * n;
        double zmax = z[0];
        for (std::size_t j = 1; j < n; ++j) zmax = std::max(zmax, z[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(z[j] - zmax);
        for (std::size_t j = 0; j < n; ++j) op[i * n + j] = std::exp(z[j] - zmax) / denom;
    }
    detail::check_output("softmax_rows", out);
    Buf obuf = out.buffer();
    detail::record_unary(out, logits, [m, n, obuf](Tape::BackCtx& ctx) {
        const auto& g = ctx.gout();
        auto& dz = ctx.pgrad(0);
        const double* p = obuf->data();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                dz[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
            }
        }
    });
    return out;
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy_with_logits: expected a matrix, got " +
                         shape_str(logits.shape()));
    }
    const std::size_t m = logits.rows(), n = logits.cols();
    if (labels.size() != m) {
        throw ShapeError("cross_entropy_with_logits: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(m) + " rows");
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
            throw ValueError("cross_entropy_with_logits: label " + std::to_string(labels[i]) +
                             " outside [0, " + std::to_string(n) + ") at row " + std::to_string(i));
        }
    }
    Tensor out(Shape{m});
    // Softmax probabilities are saved for the backward rule.
    auto probs = std::make_shared<std::vector<double>>(m * n);
    const double* zp = logits.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* z = zp + i * n;
        double zmax = z[0];
        for (std::size_t j = 1; j < n; ++j) zmax = std::max(zmax, z[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(denom);
        out.at(i) = lse - z[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < n; ++j) {
            (*probs)[i * n + j] = std::exp(z[j] - zmax) / denom;
        }
    }
    detail::check_output("cross_entropy_with_logits", out);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    detail::record_unary(out, logits, [m, n, probs, labels_copy](Tape::BackCtx& ctx) {
        const auto& g = ctx.gout();
        auto& dz = ctx.pgrad(0);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t y = static_cast<std::size_t>((*labels_copy)[i]);
            for (std::size_t j = 0; j < n; ++j) {
                const double onehot = (j == y) ? 1.0 : 0.0;
                dz[i * n + j] += g[i] * ((*probs)[i * n + j] - onehot);
            }
        }
    });
    return out;
}

Tensor relu_mask(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) > 0.0 ? 1.0 : 0.0;
    return out;
}

Tensor stop_gradient(const Tensor& a) { return a.detached(); }

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ShapeError("argmax_rows: expected a matrix, got " + shape_str(logits.shape()));
    }
    const std::size_t m = logits.rows(), n = logits.cols();
    std::vector<int> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (logits.at2(i, j) > logits.at2(i, best)) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace sca
