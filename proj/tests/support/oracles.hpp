#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "l2pf/core.hpp"
#include "l2pf/policy.hpp"
#include "l2pf/rng.hpp"

namespace l2pf::oracles {

// Counts weights by materializing every layer as a 0/1 array, zeroing pruned
// filters and the matching input channels of the following layer, and summing.
// Returns total / surviving.
double brute_force_cr(const std::vector<LayerSpec>& layers,
                      const std::map<int, std::vector<std::uint8_t>>& keep_bits);

// A chain of 2..8 layers whose first conv is not prunable, with random
// residual pairs, plus random committed masks that keep >= 1 filter.
struct RandomModel {
  std::vector<LayerSpec> layers;
  std::map<int, std::vector<std::uint8_t>> keep_bits;
};
RandomModel random_model(Rng& rng);

// Central differences of sum_i g_i p_i + h mu. Parameters whose perturbation
// flips a ReLU or crosses the probability clamp are skipped (the function is
// not differentiable there). Relative error uses a floor of 1e-6 times the
// largest gradient entry.
struct FdResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
};
FdResult finite_difference_check(const policy::PolicyParams& params,
                                 std::span<const WeightTensor> states,
                                 std::span<const double> g, double h,
                                 double step = 1e-5);

// Best R_prune over the 2^N - 1 keep patterns that keep at least one filter,
// for one synthetic layer at full recovery, where
// acc = acc_base - alpha_res * (sum of pruned importance). The all-pruned
// pattern is left out: it is never committed, and when the drop exceeds b
// its reward (-1 times a negative accuracy term) is spuriously positive.
struct Optimum {
  std::vector<std::uint8_t> keep_bits;
  double r_prune = 0.0;
};
Optimum brute_force_optimum(const std::vector<double>& importance,
                            double alpha_res, double bound);

// R_prune of a keep pattern at full recovery, computed independently.
double r_prune_at_recovery(const std::vector<double>& importance,
                           const std::vector<std::uint8_t>& keep_bits,
                           double alpha_res, double bound);

}  // namespace l2pf::oracles
