#pragma once

#include <vector>

namespace mates {

// Spearman rank correlation: Pearson correlation of ranks, with tied values
// receiving the average of the ranks they span.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

std::vector<double> average_ranks(const std::vector<double>& values);

}  // namespace mates
