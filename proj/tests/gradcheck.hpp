#pragma once

// Finite-difference gradient harness. A case is a pure function from leaf
// tensors to some tensor; the harness reduces it to a scalar with fixed
// random weights, runs backward, then re-evaluates the forward under
// coordinate perturbations and compares.

#include <austkit/rng.hpp>
#include <austkit/tensor.hpp>

#include <functional>
#include <string>
#include <vector>

namespace gradcheck {

using Builder = std::function<austkit::Tensor(const std::vector<austkit::Tensor>&)>;

struct Result {
    double max_rel = 0.0;
    long coords_checked = 0;
};

struct Options {
    double lo = -1.0, hi = 1.0;
    double h = 1e-5;
    double rel_floor = 1e-4;
    // Regenerate draws that land near a kink (relu/clamp style ops); the
    // predicate receives the flat concatenation of all leaf values.
    std::function<bool(const std::vector<std::vector<double>>&)> reject = {};
    // When > 0, check only this many randomly chosen coordinates per leaf.
    int max_coords_per_leaf = 0;
};

inline Result run(const Builder& f, const std::vector<std::vector<int>>& shapes, austkit::Rng& rng,
                  const Options& opt = {}) {
    using austkit::Tensor;

    std::vector<std::vector<double>> vals(shapes.size());
    for (int attempt = 0;; ++attempt) {
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            std::size_t n = 1;
            for (int e : shapes[i]) n *= static_cast<std::size_t>(e);
            vals[i].resize(n);
            for (auto& v : vals[i]) v = rng.uniform(opt.lo, opt.hi);
        }
        if (!opt.reject || !opt.reject(vals) || attempt > 200) break;
    }

    auto build_leaves = [&](const std::vector<std::vector<double>>& vs, bool rg) {
        std::vector<Tensor> leaves;
        leaves.reserve(vs.size());
        for (std::size_t i = 0; i < vs.size(); ++i)
            leaves.push_back(Tensor::from_data(vs[i], shapes[i], rg));
        return leaves;
    };

    // Fixed reduction weights so the scalar objective is identical across
    // the analytic pass and every FD re-evaluation.
    auto probe = f(build_leaves(vals, false));
    std::vector<double> weights(probe.numel());
    for (auto& w : weights) w = rng.uniform(-1.0, 1.0);

    auto scalar_of = [&](const std::vector<Tensor>& leaves) {
        Tensor out = f(leaves);
        Tensor w = Tensor::from_data(weights, out.shape(), false);
        return austkit::sum(austkit::mul(out, w));
    };

    auto leaves = build_leaves(vals, true);
    austkit::backward(scalar_of(leaves));

    Result res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const auto& analytic = leaves[li].grad();
        std::vector<std::size_t> coords;
        if (opt.max_coords_per_leaf > 0 &&
            vals[li].size() > static_cast<std::size_t>(opt.max_coords_per_leaf)) {
            for (int c = 0; c < opt.max_coords_per_leaf; ++c)
                coords.push_back(static_cast<std::size_t>(rng.next_u64() % vals[li].size()));
        } else {
            coords.resize(vals[li].size());
            for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
        }
        for (std::size_t c : coords) {
            auto perturbed = vals;
            perturbed[li][c] = vals[li][c] + opt.h;
            const double fp = scalar_of(build_leaves(perturbed, false)).item();
            perturbed[li][c] = vals[li][c] - opt.h;
            const double fm = scalar_of(build_leaves(perturbed, false)).item();
            const double fd = (fp - fm) / (2.0 * opt.h);
            const double an = analytic.empty() ? 0.0 : analytic[c];
            const double rel =
                std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), opt.rel_floor});
            if (rel > res.max_rel) res.max_rel = rel;
            ++res.coords_checked;
        }
    }
    return res;
}

} // namespace gradcheck
