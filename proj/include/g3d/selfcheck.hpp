// selfcheck.hpp - built-in diagnostic suite behind the `check` subcommand:
// exercises the numeric kernels and format round-trips against small
// independent references.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "g3d/alignment.hpp"
#include "g3d/common.hpp"
#include "g3d/hungarian.hpp"
#include "g3d/markup.hpp"
#include "g3d/matrix.hpp"

namespace g3d {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline double brute_force_assignment_min(const Matrix& cost) {
    std::vector<std::size_t> perm(cost.cols);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t r = 0; r < cost.rows; ++r) total += cost.at(r, perm[r]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace detail

inline std::vector<CheckResult> run_self_checks(std::uint64_t seed = 7) {
    std::vector<CheckResult> results;
    Rng rng(seed);
    auto add = [&](const std::string& name, bool ok, const std::string& detail = "") {
        results.push_back({name, ok, detail});
    };

    {  // assignment optimality on random square matrices
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            std::size_t n = 2 + rng.uniform_index(5);
            Matrix cost(n, n);
            for (double& v : cost.data) v = rng.uniform(-5.0, 5.0);
            double opt = hungarian_match(cost).total_cost;
            double brute = detail::brute_force_assignment_min(cost);
            if (std::abs(opt - brute) > 1e-9) ok = false;
        }
        add("hungarian-optimality", ok);
    }
    {  // focal gradient vs central differences
        Matrix logits(2, 3), targets(2, 3);
        for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
        for (double& v : targets.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Matrix analytic = sigmoid_focal_loss_grad(logits, targets, 2.0, 0.25);
        double dev = grad_check(
            [&](const std::vector<double>& x) {
                Matrix m = logits;
                m.data = x;
                return sigmoid_focal_loss(m, targets, 2.0, 0.25);
            },
            logits.data, analytic.data);
        add("focal-gradient", dev < 1e-4, "max rel dev " + std::to_string(dev));
    }
    {  // dice gradient vs central differences
        Matrix logits(2, 4), masks(2, 4);
        for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
        for (double& v : masks.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        Matrix analytic = dice_loss_grad(logits, masks);
        double dev = grad_check(
            [&](const std::vector<double>& x) {
                Matrix m = logits;
                m.data = x;
                return dice_loss(m, masks);
            },
            logits.data, analytic.data);
        add("dice-gradient", dev < 1e-4, "max rel dev " + std::to_string(dev));
    }
    {  // markup round-trip on random captions
        bool ok = true;
        for (int trial = 0; trial < 100 && ok; ++trial) {
            std::string markup;
            std::size_t brackets = 1 + rng.uniform_index(4);
            for (std::size_t b = 0; b < brackets; ++b) {
                markup += "word" + std::to_string(rng.uniform_index(100)) + " ";
                markup += "[phrase" + std::to_string(b) + " " + std::to_string(rng.uniform_index(30)) + "]";
            }
            ParsedMarkup parsed = parse_grounded_markup(markup);
            if (serialize_grounded_markup(parsed.text, parsed.correspondences) != markup) ok = false;
        }
        add("markup-round-trip", ok);
    }
    {  // scaled similarity bilinearity
        Matrix a(3, 4), b(2, 4), c(2, 4);
        for (double& v : a.data) v = rng.uniform(-1.0, 1.0);
        for (double& v : b.data) v = rng.uniform(-1.0, 1.0);
        for (double& v : c.data) v = rng.uniform(-1.0, 1.0);
        Matrix bc = b;
        for (std::size_t i = 0; i < bc.data.size(); ++i) bc.data[i] += c.data[i];
        Matrix lhs = scaled_similarity(a, bc, 0.1);
        Matrix r1 = scaled_similarity(a, b, 0.1), r2 = scaled_similarity(a, c, 0.1);
        bool ok = true;
        for (std::size_t i = 0; i < lhs.data.size(); ++i)
            if (std::abs(lhs.data[i] - r1.data[i] - r2.data[i]) > 1e-9) ok = false;
        add("similarity-bilinearity", ok);
    }
    return results;
}

}  // namespace g3d
