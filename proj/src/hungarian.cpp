#include "desmoke/hungarian.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace desmoke {

namespace {

// Shortest augmenting path with potentials; requires n <= m. 1-based internally.
std::vector<int> assign_rows(const std::vector<std::vector<double>>& a, int n, int m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
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
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    }
    return row_to_col;
}

}  // namespace

std::vector<std::pair<int, int>> hungarian_match(const std::vector<std::vector<double>>& cost) {
    const int rows = static_cast<int>(cost.size());
    if (rows == 0) return {};
    const int cols = static_cast<int>(cost[0].size());
    for (const auto& r : cost) {
        if (static_cast<int>(r.size()) != cols) {
            throw std::invalid_argument("hungarian_match: ragged cost matrix");
        }
    }
    if (cols == 0) return {};

    std::vector<std::pair<int, int>> out;
    if (rows <= cols) {
        const auto r2c = assign_rows(cost, rows, cols);
        for (int i = 0; i < rows; ++i) out.emplace_back(i, r2c[i]);
    } else {
        std::vector<std::vector<double>> t(cols, std::vector<double>(rows));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t[j][i] = cost[i][j];
        const auto c2r = assign_rows(t, cols, rows);
        for (int j = 0; j < cols; ++j) out.emplace_back(c2r[j], j);
        std::sort(out.begin(), out.end());
    }
    return out;
}

}  // namespace desmoke
