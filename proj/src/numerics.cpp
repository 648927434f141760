#include "safd/numerics.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace safd {

GradCheckReport gradcheck(const std::string& op_name, const DifferentiableFn& fn, const ParamMap& params,
                          double eps, double tol) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("gradcheck: eps must lie in [1e-7, 1e-3]");

    GradCheckReport report;
    report.op_name = op_name;
    report.tolerance = tol;

    const ParamMap analytic = fn.gradient(params);
    ParamMap probe = params;

    for (auto& [name, tensor] : probe) {
        const auto found = analytic.find(name);
        if (found == analytic.end()) throw std::invalid_argument("gradcheck: no analytic gradient for " + name);
        const Matrix<double>& grad = found->second;
        if (grad.rows() != tensor.rows() || grad.cols() != tensor.cols()) {
            throw ShapeError("gradcheck: gradient shape mismatch for " + name);
        }

        double worst = 0.0;
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            double& slot = tensor.data()[i];
            const double saved = slot;
            slot = saved + eps;
            const double up = fn.value(probe);
            slot = saved - eps;
            const double down = fn.value(probe);
            slot = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                std::ostringstream msg;
                msg << "gradcheck(" << op_name << "): non-finite loss when perturbing " << name << "[" << i
                    << "] by +/-" << eps;
                throw EvaluationError(msg.str());
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = grad.data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.per_param_err[name] = worst;
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    report.passed = report.max_rel_err <= tol;
    return report;
}

}  // namespace safd
