#pragma once

#include <cmath>
#include <functional>

#include "cdiff/graph.hpp"
#include "cdiff/mat.hpp"
#include "cdiff/nn.hpp"
#include "cdiff/rng.hpp"

namespace cdiff::testutil {

// Central finite-difference check of every parameter in `store` against the
// analytic gradient of the scalar loss built by `build`. `build` must read
// parameter values through g.param(...), so re-running it sees perturbations.
// Returns the max relative error, with denominator max(|a|, |n|, 1e-3).
inline double max_grad_rel_error(nn::ParamStore& store, const std::function<int(ad::Graph&)>& build,
                                 double step = 1e-5) {
    ad::Graph g;
    int root = build(g);
    g.backward(root);
    nn::GradMap analytic(store);
    analytic.accumulate(g);

    auto eval = [&]() {
        ad::Graph fg;
        fg.want_grad = false;
        int r = build(fg);
        return fg.val(r).d[0];
    };

    double max_rel = 0.0;
    for (size_t e = 0; e < store.entries.size(); ++e) {
        Mat& p = store.entries[e].value;
        for (size_t i = 0; i < p.size(); ++i) {
            double keep = p.d[i];
            p.d[i] = keep + step;
            double lp = eval();
            p.d[i] = keep - step;
            double lm = eval();
            p.d[i] = keep;
            double numeric = (lp - lm) / (2.0 * step);
            double analytic_v = analytic.grads[e].d[i];
            double denom = std::max({std::fabs(numeric), std::fabs(analytic_v), 1e-3});
            max_rel = std::max(max_rel, std::fabs(numeric - analytic_v) / denom);
        }
    }
    return max_rel;
}

// Same check for a single differentiable leaf (e.g. a latent): build must
// wire the passed Mat in through g.leaf and return {root, leaf_ref}.
inline double max_leaf_grad_rel_error(Mat& x, const std::function<std::pair<int, int>(ad::Graph&)>& build,
                                      double step = 1e-5) {
    ad::Graph g;
    auto [root, leaf] = build(g);
    g.backward(root);
    Mat analytic = g.grad(leaf);

    auto eval = [&]() {
        ad::Graph fg;
        fg.want_grad = false;
        auto [r, l] = build(fg);
        (void)l;
        return fg.val(r).d[0];
    };

    double max_rel = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x.d[i];
        x.d[i] = keep + step;
        double lp = eval();
        x.d[i] = keep - step;
        double lm = eval();
        x.d[i] = keep;
        double numeric = (lp - lm) / (2.0 * step);
        double denom = std::max({std::fabs(numeric), std::fabs(analytic.d[i]), 1e-3});
        max_rel = std::max(max_rel, std::fabs(numeric - analytic.d[i]) / denom);
    }
    return max_rel;
}

}  // namespace cdiff::testutil
