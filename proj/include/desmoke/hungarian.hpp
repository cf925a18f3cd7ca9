#pragma once

#include <utility>
#include <vector>

namespace desmoke {

/// Minimum-cost bipartite assignment for a rectangular cost matrix
/// (rows x cols). Returns min(rows, cols) (row, col) pairs sorted by row.
std::vector<std::pair<int, int>> hungarian_match(const std::vector<std::vector<double>>& cost);

}  // namespace desmoke
