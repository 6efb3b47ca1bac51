#pragma once

// Central-difference check of BoundParams gradients for any scalar loss built
// from a ModelParams set.

#include <algorithm>
#include <cmath>
#include <functional>

#include "neureg/encoder.hpp"
#include "neureg/random.hpp"

namespace testutil {

struct FdResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero = 0;  // probes whose analytic gradient is not exactly zero
};

using ParamLoss = std::function<neureg::ad::Tensor(neureg::ad::Tape&, const neureg::BoundParams&)>;

/// Samples `probes` coordinates uniformly over all scalars (or only those whose
/// name starts with `prefix`) and compares against (L(p+h) - L(p-h)) / 2h.
inline FdResult fd_check_params(const neureg::ModelParams& params, const ParamLoss& loss, std::size_t probes, std::uint64_t seed,
                                double step = 1e-5, double abs_floor = 1e-8, const std::string& prefix = "") {
    using namespace neureg;
    std::vector<std::vector<double>> grads;
    {
        ad::Tape tape;
        const BoundParams bound(tape, params);
        tape.backward(loss(tape, bound));
        grads = bound.gradients();
    }
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t p = 0; p < params.list().size(); ++p)
        if (params.list()[p].name.rfind(prefix, 0) == 0)
            for (std::size_t i = 0; i < params.list()[p].value.size(); ++i) pool.push_back({p, i});
    Rng rng(seed);
    auto eval = [&](const ModelParams& mp) {
        ad::Tape tape;
        const BoundParams bound(tape, mp);
        return loss(tape, bound).item();
    };
    FdResult r;
    ModelParams work = params;
    for (std::size_t n = 0; n < probes && !pool.empty(); ++n) {
        const auto [p, i] = pool[rng.below(pool.size())];
        double& x = work.list()[p].value[i];
        const double saved = x;
        x = saved + step;
        const double up = eval(work);
        x = saved - step;
        const double down = eval(work);
        x = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads[p][i];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
        ++r.checked;
        if (analytic != 0.0) ++r.nonzero;
    }
    return r;
}

}  // namespace testutil
