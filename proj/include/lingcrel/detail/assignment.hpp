#pragma once

#include "lingcrel/detail/linalg.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace lingcrel::detail {

/// Min-sum perfect assignment on a square cost matrix (Hungarian algorithm,
/// O(n^3)). Returns col_of_row: row r is assigned column col_of_row[r].
inline std::vector<int> min_cost_assignment(const MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials formulation.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> row_of_col(n + 1, 0), way(n + 1, 0);
    for (int r = 1; r <= n; ++r) {
        row_of_col[0] = r;
        int c0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[c0] = 1;
            const int r0 = row_of_col[c0];
            double delta = inf;
            int c1 = 0;
            for (int c = 1; c <= n; ++c) {
                if (used[c]) continue;
                const double cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
                if (cur < minv[c]) {
                    minv[c] = cur;
                    way[c] = c0;
                }
                if (minv[c] < delta) {
                    delta = minv[c];
                    c1 = c;
                }
            }
            for (int c = 0; c <= n; ++c) {
                if (used[c]) {
                    u[row_of_col[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            c0 = c1;
        } while (row_of_col[c0] != 0);
        do {
            const int c1 = way[c0];
            row_of_col[c0] = row_of_col[c1];
            c0 = c1;
        } while (c0);
    }
    std::vector<int> col_of_row(n, -1);
    for (int c = 1; c <= n; ++c)
        if (row_of_col[c] > 0) col_of_row[row_of_col[c] - 1] = c - 1;
    return col_of_row;
}

namespace assignment_detail {

inline bool augment(int r, const std::vector<std::vector<int>>& adj, std::vector<int>& row_of_col, std::vector<char>& seen) {
    for (int c : adj[r]) {
        if (seen[c]) continue;
        seen[c] = 1;
        if (row_of_col[c] < 0 || augment(row_of_col[c], adj, row_of_col, seen)) {
            row_of_col[c] = r;
            return true;
        }
    }
    return false;
}

inline bool has_perfect_matching(const MatrixXd& cost, double threshold) {
    const int n = static_cast<int>(cost.rows());
    std::vector<std::vector<int>> adj(n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            if (cost(r, c) <= threshold) adj[r].push_back(c);
    std::vector<int> row_of_col(n, -1);
    for (int r = 0; r < n; ++r) {
        std::vector<char> seen(n, 0);
        if (!augment(r, adj, row_of_col, seen)) return false;
    }
    return true;
}

}  // namespace assignment_detail

/// Smallest achievable maximum entry over all perfect assignments.
inline double bottleneck_value(const MatrixXd& cost) {
    std::vector<double> vals(cost.data(), cost.data() + cost.size());
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    std::size_t lo = 0, hi = vals.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (assignment_detail::has_perfect_matching(cost, vals[mid])) hi = mid;
        else lo = mid + 1;
    }
    return vals[lo];
}

/// Bottleneck-optimal assignment; ties among bottleneck-optimal assignments
/// are broken by minimum total cost.
inline std::vector<int> bottleneck_assignment(const MatrixXd& cost) {
    if (cost.size() == 0) return {};
    const double bound = bottleneck_value(cost);
    // Forbidden entries get a cost exceeding any feasible total.
    const double big = 1.0 + static_cast<double>(cost.rows()) * (cost.cwiseAbs().maxCoeff() + 1.0);
    MatrixXd restricted = cost;
    for (Index r = 0; r < cost.rows(); ++r)
        for (Index c = 0; c < cost.cols(); ++c)
            if (cost(r, c) > bound) restricted(r, c) = big;
    return min_cost_assignment(restricted);
}

}  // namespace lingcrel::detail
