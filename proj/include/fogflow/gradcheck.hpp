#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fogflow/errors.hpp"
#include "fogflow/param_store.hpp"

namespace fogflow {

// Central-difference verification of reverse-mode gradients.
//
// loss_fn evaluates the scalar loss at the store's current values and, as a
// side effect, accumulates d(loss)/d(params) into the store's grads (the
// usual tape backward + accumulate_param_grads sequence).  Returns
// max_i |g_ad[i] - g_fd[i]| / max(1, |g_fd[i]|) over every coordinate.
inline double grad_check(const std::function<double(ParamStore&)>& loss_fn, ParamStore& params,
                         double eps = 1e-5) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ValidationError("grad_check: eps must be in (0, 1e-2]");
    params.zero_grads();
    const double base = loss_fn(params);
    if (!std::isfinite(base)) throw DivergenceError("grad_check: non-finite loss at base point");
    std::vector<double> g_ad;
    g_ad.reserve(params.total_size());
    for (const auto& e : params.entries()) g_ad.insert(g_ad.end(), e.grad.begin(), e.grad.end());

    std::vector<double> theta = params.flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + eps;
        params.unflatten(theta);
        const double fp = loss_fn(params);
        theta[i] = saved - eps;
        params.unflatten(theta);
        const double fm = loss_fn(params);
        theta[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DivergenceError("grad_check: non-finite loss at perturbed point");
        const double fd = (fp - fm) / (2.0 * eps);
        const double rel = std::abs(g_ad[i] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
    }
    params.unflatten(theta);
    params.zero_grads();
    return worst;
}

}  // namespace fogflow
