// hungarian.hpp - exact minimum-cost bipartite assignment (Jonker-Volgenant
// style O(n^3) core) with deterministic lexicographic tie-breaking and
// rectangular-input support via zero-cost padding.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "g3d/common.hpp"
#include "g3d/matrix.hpp"

namespace g3d {

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
    std::vector<std::size_t> unmatched_rows;
    std::vector<std::size_t> unmatched_cols;
    double total_cost = 0.0;
};

namespace detail {

// Shortest augmenting path assignment on a square matrix; returns row -> col.
inline std::vector<std::size_t> solve_square(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

inline double assignment_cost(const std::vector<std::vector<double>>& cost,
                              const std::vector<std::size_t>& row_to_col) {
    double total = 0.0;
    for (std::size_t i = 0; i < row_to_col.size(); ++i) total += cost[i][row_to_col[i]];
    return total;
}

// Among all optimal assignments, pick the lexicographically smallest by
// (row index, column index). O(n^5), applied only at small sizes where the
// tie-break contract is observable.
inline std::vector<std::size_t> lexicographic_refine(const std::vector<std::vector<double>>& cost,
                                                     double optimal_cost) {
    const std::size_t n = cost.size();
    const double tol = 1e-9 * (1.0 + std::abs(optimal_cost));
    std::vector<std::size_t> fixed_cols;
    std::vector<char> col_taken(n, 0);
    double fixed_cost = 0.0;
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t col = 0; col < n; ++col) {
            if (col_taken[col]) continue;
            // cost of the best completion with cost[row][col] fixed
            std::vector<std::vector<double>> sub;
            std::vector<std::size_t> free_cols;
            for (std::size_t c = 0; c < n; ++c)
                if (!col_taken[c] && c != col) free_cols.push_back(c);
            for (std::size_t r = row + 1; r < n; ++r) {
                std::vector<double> line;
                for (std::size_t c : free_cols) line.push_back(cost[r][c]);
                sub.push_back(std::move(line));
            }
            double completion = 0.0;
            if (!sub.empty()) completion = assignment_cost(sub, solve_square(sub));
            if (fixed_cost + cost[row][col] + completion <= optimal_cost + tol) {
                fixed_cols.push_back(col);
                col_taken[col] = 1;
                fixed_cost += cost[row][col];
                break;
            }
        }
    }
    return fixed_cols;
}

}  // namespace detail

// Minimum-cost matching of min(rows, cols) pairs; ties broken by lowest
// row-then-column index.
inline Assignment hungarian_match(const Matrix& cost) {
    for (double v : cost.data)
        if (!std::isfinite(v)) throw Error("hungarian_match: non-finite cost");
    const std::size_t r = cost.rows, c = cost.cols;
    const std::size_t n = std::max(r, c);
    if (n == 0) return {};
    std::vector<std::vector<double>> padded(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) padded[i][j] = cost.at(i, j);

    std::vector<std::size_t> row_to_col = detail::solve_square(padded);
    if (n <= 16) {
        row_to_col = detail::lexicographic_refine(padded, detail::assignment_cost(padded, row_to_col));
    }

    Assignment out;
    std::vector<char> col_matched(c, 0);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t j = row_to_col[i];
        if (j < c) {
            out.pairs.emplace_back(i, j);
            out.total_cost += cost.at(i, j);
            col_matched[j] = 1;
        } else {
            out.unmatched_rows.push_back(i);
        }
    }
    for (std::size_t j = 0; j < c; ++j)
        if (!col_matched[j]) out.unmatched_cols.push_back(j);
    return out;
}

}  // namespace g3d
