#include <cmath>
#include <sstream>

#include "sca/tensor.hpp"

namespace sca {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                           double step, double tol) {
    if (!(step > 0.0)) throw ValueError("grad_check: step must be positive");

    // Tape gradient.
    Tensor x = x0.clone();
    Tensor g;
    {
        TapeScope scope;
        scope.tape().watch(x);
        Tensor y = f(x);
        if (!y.is_scalar()) {
            throw GraphError("grad_check: f must return a scalar, got shape " +
                             shape_str(y.shape()));
        }
        Gradients grads = scope.tape().backward(y);
        g = grads.grad(x);
    }

    // Central finite differences, with taping suspended so probe evaluations
    // never record onto a caller's tape.
    TapeSuspend suspend;
    Tensor xw = x0.clone();
    auto eval = [&]() { return f(xw).item(); };
    const double f0 = eval();

    GradCheckReport report;
    for (std::size_t i = 0; i < xw.size(); ++i) {
        const double orig = xw.at(i);
        xw.at(i) = orig + step;
        const double fp = eval();
        xw.at(i) = orig - step;
        const double fm = eval();
        xw.at(i) = orig;

        // One-sided slopes disagreeing flags a kink within the probe window
        // (e.g. relu crossing zero); such coordinates are not comparable
        // against the analytic subgradient and are skipped.
        const double dplus = (fp - f0) / step;
        const double dminus = (f0 - fm) / step;
        if (std::abs(dplus - dminus) > 1e-3 * (std::abs(dplus) + std::abs(dminus) + 1.0)) {
            ++report.kinks_skipped;
            continue;
        }

        const double d = (fp - fm) / (2.0 * step);
        const double gi = g.at(i);
        // Central differences of a function whose second derivative jumps
        // (e.g. square(relu(x)) at 0) are only O(step) accurate, so absolute
        // disagreements below the step size carry no information.
        const double rel = std::abs(gi - d) < step
                               ? 0.0
                               : std::abs(gi - d) / std::max({std::abs(gi), std::abs(d), 1e-6});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            std::ostringstream os;
            os << "coord " << i << ": tape " << gi << " vs fd " << d;
            report.worst = os.str();
        }
        ++report.checked;
    }
    report.pass = report.checked > 0 && report.max_rel_error < tol;
    return report;
}

} // namespace sca
